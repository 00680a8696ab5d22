//! Spatial support tracking for gradients.
//!
//! A one-hot seed on an image output only reaches a small neighbourhood of
//! the input through a stack of 3x3 convolutions. Gradients therefore carry
//! the rectangle outside of which they are known to be zero, and every
//! backward rule only touches that rectangle.

use crate::scalar::Scalar;

/// Half-open rectangle `[top, bottom) x [left, right)` over the spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Window {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            top: 0,
            bottom: height,
            left: 0,
            right: width,
        }
    }

    pub fn point(row: usize, col: usize) -> Self {
        Self {
            top: row,
            bottom: row + 1,
            left: col,
            right: col + 1,
        }
    }

    /// Grows the window by `radius` on every side, clipped to the image.
    pub fn dilate(&self, radius: usize, height: usize, width: usize) -> Self {
        Self {
            top: self.top.saturating_sub(radius),
            bottom: (self.bottom + radius).min(height),
            left: self.left.saturating_sub(radius),
            right: (self.right + radius).min(width),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            top: self.top.min(other.top),
            bottom: self.bottom.max(other.bottom),
            left: self.left.min(other.left),
            right: self.right.max(other.right),
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.bottom && col >= self.left && col < self.right
    }

    pub fn encloses(&self, other: &Self) -> bool {
        self.top <= other.top
            && self.bottom >= other.bottom
            && self.left <= other.left
            && self.right >= other.right
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }
}

/// Views any tensor shape as `[batch, channels, height, width]`.
///
/// Tensors that are not rank 4 are treated as a single row so that they
/// always carry a full window.
pub(crate) fn as4(shape: &[usize]) -> [usize; 4] {
    match *shape {
        [b, c, h, w] => [b, c, h, w],
        _ => [1, 1, 1, shape.iter().product()],
    }
}

/// Gradient of one graph node, stored only over `window`.
///
/// Layout is `[batch][channel][window row][window col]`.
#[derive(Clone, Debug)]
pub(crate) struct Grad<T> {
    pub dims: [usize; 4],
    pub window: Window,
    pub data: Vec<T>,
}

impl<T: Scalar> Grad<T> {
    pub fn zeros(dims: [usize; 4], window: Window) -> Self {
        Self {
            dims,
            window,
            data: vec![T::zero(); dims[0] * dims[1] * window.area()],
        }
    }

    pub fn dense(dims: [usize; 4], data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self {
            dims,
            window: Window::full(dims[2], dims[3]),
            data,
        }
    }

    pub fn is_full(&self) -> bool {
        self.window == Window::full(self.dims[2], self.dims[3])
    }

    /// Offset of the `(b, c)` plane inside `data`.
    pub fn plane(&self, b: usize, c: usize) -> usize {
        (b * self.dims[1] + c) * self.window.area()
    }

    /// Value at absolute coordinates; zero outside the window.
    pub fn at(&self, b: usize, c: usize, row: usize, col: usize) -> T {
        if !self.window.contains(row, col) {
            return T::zero();
        }
        let w = &self.window;
        self.data[self.plane(b, c) + (row - w.top) * w.width() + (col - w.left)]
    }

    /// Re-embeds the gradient into a larger window.
    pub fn expand(&self, target: Window) -> Self {
        debug_assert!(target.encloses(&self.window));
        if target == self.window {
            return self.clone();
        }
        let mut out = Self::zeros(self.dims, target);
        let src_w = self.window;
        let (sw, tw) = (src_w.width(), target.width());
        for b in 0..self.dims[0] {
            for c in 0..self.dims[1] {
                let sp = self.plane(b, c);
                let tp = out.plane(b, c);
                for r in 0..src_w.height() {
                    let src = &self.data[sp + r * sw..sp + (r + 1) * sw];
                    let t0 = tp + (r + src_w.top - target.top) * tw + (src_w.left - target.left);
                    out.data[t0..t0 + sw].copy_from_slice(src);
                }
            }
        }
        out
    }

    pub fn to_full(&self) -> Self {
        self.expand(Window::full(self.dims[2], self.dims[3]))
    }

    /// Adds `other` into `self`, growing the window to the union if needed.
    pub fn accumulate(&mut self, other: Grad<T>) {
        debug_assert_eq!(self.dims, other.dims);
        if self.window != other.window {
            let union = self.window.union(&other.window);
            if union != self.window {
                *self = self.expand(union);
            }
            if other.window != union {
                let other = other.expand(union);
                add_into(&mut self.data, &other.data);
                return;
            }
        }
        add_into(&mut self.data, &other.data);
    }

    /// Applies `f(grad, flat)` over the window, where `flat` is the dense
    /// row-major index of the position.
    pub fn map_at(&self, f: impl Fn(T, usize) -> T) -> Self {
        let [nb, nc, h, w] = self.dims;
        let win = self.window;
        let mut out = Vec::with_capacity(self.data.len());
        for b in 0..nb {
            for c in 0..nc {
                let vplane = (b * nc + c) * h * w;
                let gp = self.plane(b, c);
                for r in 0..win.height() {
                    let vrow = vplane + (r + win.top) * w + win.left;
                    let grow = gp + r * win.width();
                    let grads = &self.data[grow..grow + win.width()];
                    out.extend(grads.iter().enumerate().map(|(k, &g)| f(g, vrow + k)));
                }
            }
        }
        Self {
            dims: self.dims,
            window: win,
            data: out,
        }
    }

    /// Applies `f(grad, value)` elementwise, where `values` is a dense
    /// forward tensor with the same dims.
    pub fn map_with(&self, values: &[T], f: impl Fn(T, T) -> T) -> Self {
        self.map_at(|g, k| f(g, values[k]))
    }

    pub fn scaled(mut self, factor: T) -> Self {
        for v in &mut self.data {
            *v *= factor;
        }
        self
    }

    pub fn to_dense(&self) -> Vec<T> {
        if self.is_full() {
            self.data.clone()
        } else {
            self.to_full().data
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilate_clips_to_bounds() {
        let w = Window::point(0, 5).dilate(2, 4, 6);
        assert_eq!(w, Window { top: 0, bottom: 3, left: 3, right: 6 });
    }

    #[test]
    fn accumulate_unions_windows() {
        let dims = [1, 1, 4, 4];
        let mut a = Grad::<f64>::zeros(dims, Window::point(0, 0));
        a.data[0] = 1.0;
        let mut b = Grad::<f64>::zeros(dims, Window::point(3, 3));
        b.data[0] = 2.0;
        a.accumulate(b);
        assert_eq!(a.window, Window::full(4, 4));
        let dense = a.to_dense();
        assert_eq!(dense[0], 1.0);
        assert_eq!(dense[15], 2.0);
        assert_eq!(dense.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn expand_preserves_values() {
        let dims = [2, 2, 3, 3];
        let win = Window { top: 1, bottom: 3, left: 0, right: 2 };
        let mut g = Grad::<f64>::zeros(dims, win);
        for (k, v) in g.data.iter_mut().enumerate() {
            *v = k as f64;
        }
        let full = g.to_full();
        for b in 0..2 {
            for c in 0..2 {
                for r in 0..3 {
                    for col in 0..3 {
                        assert_eq!(full.at(b, c, r, col), g.at(b, c, r, col));
                    }
                }
            }
        }
    }
}
