//! Dense row-major n-dimensional arrays.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense array with finite entries.
///
/// Image tensors use the `[batch, channels, height, width]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::ElementCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from values the caller has already checked.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A tensor of zeros with a single one at `flat_index`.
    pub fn one_hot(shape: impl Into<Vec<usize>>, flat_index: usize) -> Self {
        let mut t = Self::zeros(shape);
        t.data[flat_index] = T::one();
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The `(batch, channels, height, width)` extents of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        same_shape("zip_map", self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn reshaped(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product::<usize>();
        if n != self.data.len() {
            return Err(Error::ElementCount {
                shape,
                expected: n,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Replaces one entry, used by finite-difference probes.
    pub fn with_value(mut self, flat_index: usize, value: T) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite { index: flat_index });
        }
        self.data[flat_index] = value;
        Ok(self)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

pub(crate) fn same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape.len() != b.shape.len() {
        return Err(Error::Rank {
            op,
            expected: a.shape.len(),
            shape: b.shape.clone(),
        });
    }
    const AXES: [&str; 4] = ["batch", "channels", "height", "width"];
    for (axis, (&x, &y)) in a.shape.iter().zip(&b.shape).enumerate() {
        if x != y {
            return Err(Error::Dimension {
                op,
                axis: if a.shape.len() == 4 { AXES[axis] } else { "flat" },
                expected: x,
                actual: y,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_element_count() {
        let err = Tensor::<f64>::new([2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ElementCount { expected: 6, actual: 5, .. }));
    }

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::new([3], vec![0.0, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
        let err = Tensor::new([1], vec![f64::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 0 }));
    }

    #[test]
    fn one_hot_and_dims() {
        let t = Tensor::<f32>::one_hot([1, 1, 2, 2], 3);
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.dims4("test").unwrap(), [1, 1, 2, 2]);
        assert!(Tensor::<f32>::zeros([4]).dims4("test").is_err());
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let a = Tensor::<f64>::zeros([1, 1, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 1, 3, 4]);
        match same_shape("add", &a, &b).unwrap_err() {
            Error::Dimension { axis, .. } => assert_eq!(axis, "width"),
            e => panic!("unexpected {e}"),
        }
    }
}
