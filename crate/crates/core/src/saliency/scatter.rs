use std::io::Write;

use crate::error::{Error, Result};
use crate::image::{ImageShape, Pixel};
use crate::scalar::Scalar;

use super::GuidanceImage;

pub const SCATTER_HEADER: &str = "pixel,gmri,gpet,highlight";

/// One `(g_mri, g_pet)` point per pixel plus the neighbourhood of the
/// principle pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterData<T> {
    pub points: Vec<(T, T)>,
    /// 1-based pixel indices inside the highlight square, ascending.
    pub highlight: Vec<usize>,
    /// Pearson correlation over the highlight set, absent when either axis
    /// has zero variance there.
    pub correlation: Option<f64>,
}

/// Pearson correlation, `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based indices of the square of half-size `radius` around pixel
/// `index`, clipped to the image, in ascending order.
pub fn neighborhood(shape: ImageShape, index: usize, radius: usize) -> Result<Vec<usize>> {
    let Pixel { row, col } = shape.pixel(index)?;
    let mut out = Vec::new();
    for r in row.saturating_sub(radius)..(row + radius + 1).min(shape.height) {
        for c in col.saturating_sub(radius)..(col + radius + 1).min(shape.width) {
            out.push(r * shape.width + c + 1);
        }
    }
    Ok(out)
}

pub fn scatter_data<T: Scalar>(
    gmri: &GuidanceImage<T>,
    gpet: &GuidanceImage<T>,
    principle: usize,
    radius: usize,
) -> Result<ScatterData<T>> {
    gmri.values.check_same_shape(&gpet.values, "scatter_data")?;
    let shape = gmri.values.shape();
    let points: Vec<(T, T)> = gmri
        .values
        .data()
        .iter()
        .zip(gpet.values.data())
        .map(|(&a, &b)| (a, b))
        .collect();
    let highlight = neighborhood(shape, principle, radius)?;
    let xs: Vec<f64> = highlight.iter().map(|&i| points[i - 1].0.to_f64_lossy()).collect();
    let ys: Vec<f64> = highlight.iter().map(|&i| points[i - 1].1.to_f64_lossy()).collect();
    Ok(ScatterData {
        correlation: pearson(&xs, &ys),
        points,
        highlight,
    })
}

/// Writes `pixel,gmri,gpet,highlight` rows, one per pixel.
pub fn write_scatter_csv<T: Scalar>(data: &ScatterData<T>, mut out: impl Write) -> Result<()> {
    writeln!(out, "{SCATTER_HEADER}")?;
    let mut next = data.highlight.iter().peekable();
    for (k, (a, b)) in data.points.iter().enumerate() {
        let i = k + 1;
        let hit = next.next_if_eq(&&i).is_some();
        writeln!(out, "{i},{a},{b},{}", u8::from(hit)).map_err(Error::Io)?;
    }
    Ok(())
}
