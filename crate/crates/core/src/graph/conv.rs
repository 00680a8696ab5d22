//! Same-padded stride-1 2-D convolution via im2col and GEMM.

use super::window::{Grad, Window};
use crate::scalar::Scalar;

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds the input patches centred on every position of `win` for batch
/// element `b`. Result is `[c_in * k * k, win.area()]`.
fn im2col<T: Scalar>(geom: &ConvGeom, input: &[T], b: usize, win: Window, cols: &mut Vec<T>) {
    let (h, w, k, pad) = (geom.height, geom.width, geom.kernel, geom.pad());
    let area = win.area();
    cols.clear();
    cols.resize(geom.patch() * area, T::zero());
    let in_base = b * geom.c_in * geom.plane();
    for ci in 0..geom.c_in {
        let chan = &input[in_base + ci * geom.plane()..in_base + (ci + 1) * geom.plane()];
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let dst = &mut cols[row * area..(row + 1) * area];
                // Output columns x in win whose source column x + dx - pad is in bounds.
                let x_lo = win.left.max(pad.saturating_sub(dx));
                let x_hi = win.right.min((w + pad).saturating_sub(dx));
                if x_lo >= x_hi {
                    continue;
                }
                for y in win.top..win.bottom {
                    let sy = y + dy;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let src_row = (sy - pad) * w;
                    let d0 = (y - win.top) * win.width();
                    let src = &chan[src_row + x_lo + dx - pad..src_row + x_hi + dx - pad];
                    dst[d0 + x_lo - win.left..d0 + x_hi - win.left].copy_from_slice(src);
                }
            }
        }
    }
}

/// `out[b] = kernel x im2col(input[b]) + bias`.
pub(crate) fn forward<T: Scalar>(geom: &ConvGeom, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let plane = geom.plane();
    let mut out = vec![T::zero(); geom.batch * geom.c_out * plane];
    let mut cols = Vec::new();
    let full = Window::full(geom.height, geom.width);
    for b in 0..geom.batch {
        let dst = &mut out[b * geom.c_out * plane..(b + 1) * geom.c_out * plane];
        for (co, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias[co]);
        }
        let src: &[T] = if geom.kernel == 1 {
            &input[b * geom.c_in * plane..(b + 1) * geom.c_in * plane]
        } else {
            im2col(geom, input, b, full, &mut cols);
            &cols
        };
        T::gemm(
            geom.c_out,
            geom.patch(),
            plane,
            T::one(),
            kernel,
            false,
            src,
            false,
            T::one(),
            dst,
        );
    }
    out
}

/// Gradient with respect to the convolution input, restricted to the
/// dilation of the output-gradient window.
pub(crate) fn backward_input<T: Scalar>(geom: &ConvGeom, kernel: &[T], g_out: &Grad<T>) -> Grad<T> {
    let (h, w, k, pad) = (geom.height, geom.width, geom.kernel, geom.pad());
    let win_out = g_out.window;
    let win_in = win_out.dilate(pad, h, w);
    let mut g_in = Grad::zeros([geom.batch, geom.c_in, h, w], win_in);
    let area = win_out.area();
    let mut cols = vec![T::zero(); geom.patch() * area];
    for b in 0..geom.batch {
        let g = &g_out.data[g_out.plane(b, 0)..g_out.plane(b, 0) + geom.c_out * area];
        // cols[patch, area] = kernel^T[patch, c_out] x g[c_out, area]
        T::gemm(
            geom.patch(),
            geom.c_out,
            area,
            T::one(),
            kernel,
            true,
            g,
            false,
            T::zero(),
            &mut cols,
        );
        let in_area = win_in.area();
        let in_w = win_in.width();
        for ci in 0..geom.c_in {
            let base = g_in.plane(b, ci);
            let dst = &mut g_in.data[base..base + in_area];
            for dy in 0..k {
                for dx in 0..k {
                    let row = (ci * k + dy) * k + dx;
                    let src = &cols[row * area..(row + 1) * area];
                    let x_lo = win_out.left.max(pad.saturating_sub(dx));
                    let x_hi = win_out.right.min((w + pad).saturating_sub(dx));
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in win_out.top..win_out.bottom {
                        let ty = y + dy;
                        if ty < pad || ty - pad >= h {
                            continue;
                        }
                        let ty = ty - pad;
                        let s0 = (y - win_out.top) * win_out.width();
                        let d0 = (ty - win_in.top) * in_w;
                        let src_row = &src[s0 + x_lo - win_out.left..s0 + x_hi - win_out.left];
                        let t_lo = x_lo + dx - pad - win_in.left;
                        let dst_row = &mut dst[d0 + t_lo..d0 + t_lo + (x_hi - x_lo)];
                        for (d, &s) in dst_row.iter_mut().zip(src_row) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    g_in
}

/// Gradients with respect to the kernel `[c_out, c_in, k, k]` and bias `[c_out]`.
pub(crate) fn backward_params<T: Scalar>(
    geom: &ConvGeom,
    input: &[T],
    g_out: &Grad<T>,
) -> (Vec<T>, Vec<T>) {
    let win = g_out.window;
    let area = win.area();
    let mut g_kernel = vec![T::zero(); geom.c_out * geom.patch()];
    let mut g_bias = vec![T::zero(); geom.c_out];
    let mut cols = Vec::new();
    for b in 0..geom.batch {
        let g = &g_out.data[g_out.plane(b, 0)..g_out.plane(b, 0) + geom.c_out * area];
        for (co, row) in g.chunks(area).enumerate() {
            g_bias[co] += row.iter().copied().sum::<T>();
        }
        im2col(geom, input, b, win, &mut cols);
        // g_kernel[c_out, patch] += g[c_out, area] x cols^T[area, patch]
        T::gemm(
            geom.c_out,
            area,
            geom.patch(),
            T::one(),
            g,
            false,
            &cols,
            true,
            T::one(),
            &mut g_kernel,
        );
    }
    (g_kernel, g_bias)
}
