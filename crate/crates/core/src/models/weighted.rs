//! Parameter-free pixelwise weighted averaging.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Weights and output of one pixel: `w_k = x_k / (x1 + x2)`,
/// `y = w1 x1 + w2 x2`. Both weights are one half where `x1 + x2 = 0`.
pub(crate) fn blend<T: Scalar>(x1: T, x2: T) -> (T, T, T) {
    let sum = x1 + x2;
    let (w1, w2) = if sum == T::zero() {
        let half = T::from_f64_lossy(0.5);
        (half, half)
    } else {
        (x1 / sum, x2 / sum)
    };
    (w1, w2, w1 * x1 + w2 * x2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedAverageResult<T> {
    pub fused: Image<T>,
    pub w1: Image<T>,
    pub w2: Image<T>,
}

pub fn weighted_average<T: Scalar>(x1: &Image<T>, x2: &Image<T>) -> Result<WeightedAverageResult<T>> {
    x1.check_same_shape(x2, "weighted_average")?;
    x1.check_unit_range("x1")?;
    x2.check_unit_range("x2")?;
    let n = x1.shape().n();
    let (mut fused, mut w1, mut w2) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (&a, &b) in x1.data().iter().zip(x2.data()) {
        let (p, q, y) = blend(a, b);
        w1.push(p);
        w2.push(q);
        fused.push(y);
    }
    let shape = x1.shape();
    Ok(WeightedAverageResult {
        fused: Image::from_parts(shape, fused),
        w1: Image::from_parts(shape, w1),
        w2: Image::from_parts(shape, w2),
    })
}

/// Closed-form `(dy/dx1, dy/dx2)` at one pixel, from differentiating
/// `y = (x1^2 + x2^2) / (x1 + x2)` by hand.
pub fn analytic_wavg_gradient<T: Scalar>(
    x1: &Image<T>,
    x2: &Image<T>,
    index: usize,
) -> Result<(T, T)> {
    x1.check_same_shape(x2, "analytic_wavg_gradient")?;
    let pixel = x1.shape().pixel(index)?;
    let (a, b) = (x1.at(pixel), x2.at(pixel));
    let s = a + b;
    if s <= T::zero() {
        return Err(Error::OracleUndefined { index });
    }
    let two = T::from_f64_lossy(2.0);
    let d1 = (a * a + two * a * b - b * b) / (s * s);
    let d2 = (b * b + two * a * b - a * a) / (s * s);
    Ok((d1, d2))
}
