//! Windowed structural similarity with an analytic gradient.
//!
//! Local statistics are Gaussian-weighted over every fully contained window
//! position ("valid" windowing), and the index is the mean of the SSIM map.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    /// Side length of the square Gaussian window (odd).
    pub window: usize,
    pub sigma: f64,
    /// Luminance stabilizer, `(0.01 * L)^2` for dynamic range `L = 1`.
    pub c1: f64,
    /// Contrast stabilizer, `(0.03 * L)^2`.
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

/// SSIM of two same-shaped images with the default window and constants.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    ssim_with(a, b, &SsimConfig::default())
}

pub fn ssim_with<T: Scalar>(a: &Image<T>, b: &Image<T>, config: &SsimConfig) -> Result<T> {
    a.check_same_shape(b, "ssim")?;
    ssim_plane(a.data(), b.data(), a.height(), a.width(), config)
}

fn gaussian<T: Scalar>(config: &SsimConfig) -> Vec<T> {
    let half = (config.window / 2) as f64;
    let raw: Vec<f64> = (0..config.window)
        .map(|k| {
            let d = k as f64 - half;
            (-d * d / (2.0 * config.sigma * config.sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::from_f64_lossy(v / total)).collect()
}

struct Blur<T> {
    taps: Vec<T>,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
}

impl<T: Scalar> Blur<T> {
    fn new(height: usize, width: usize, config: &SsimConfig) -> Result<Self> {
        if config.window == 0 || config.window > height || config.window > width {
            return Err(Error::WindowTooLarge {
                window: config.window,
                height,
                width,
            });
        }
        Ok(Self {
            taps: gaussian(config),
            height,
            width,
            out_h: height - config.window + 1,
            out_w: width - config.window + 1,
        })
    }

    /// Separable valid correlation: `[h, w] -> [out_h, out_w]`.
    fn apply(&self, x: &[T]) -> Vec<T> {
        let k = self.taps.len();
        let mut tmp = vec![T::zero(); self.height * self.out_w];
        for y in 0..self.height {
            let row = &x[y * self.width..(y + 1) * self.width];
            for ox in 0..self.out_w {
                let mut acc = T::zero();
                for t in 0..k {
                    acc += self.taps[t] * row[ox + t];
                }
                tmp[y * self.out_w + ox] = acc;
            }
        }
        let mut out = vec![T::zero(); self.out_h * self.out_w];
        for oy in 0..self.out_h {
            let dst = &mut out[oy * self.out_w..(oy + 1) * self.out_w];
            for t in 0..k {
                let src = &tmp[(oy + t) * self.out_w..(oy + t + 1) * self.out_w];
                let g = self.taps[t];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += g * s;
                }
            }
        }
        out
    }

    /// Transpose of [`Blur::apply`]: `[out_h, out_w] -> [h, w]`.
    fn adjoint(&self, m: &[T]) -> Vec<T> {
        let k = self.taps.len();
        let mut tmp = vec![T::zero(); self.height * self.out_w];
        for oy in 0..self.out_h {
            let src = &m[oy * self.out_w..(oy + 1) * self.out_w];
            for t in 0..k {
                let g = self.taps[t];
                let dst = &mut tmp[(oy + t) * self.out_w..(oy + t + 1) * self.out_w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += g * s;
                }
            }
        }
        let mut out = vec![T::zero(); self.height * self.width];
        for y in 0..self.height {
            let row = &mut out[y * self.width..(y + 1) * self.width];
            for ox in 0..self.out_w {
                let v = tmp[y * self.out_w + ox];
                for t in 0..k {
                    row[ox + t] += self.taps[t] * v;
                }
            }
        }
        out
    }
}

struct LocalStats<T> {
    mu_a: Vec<T>,
    mu_b: Vec<T>,
    var_a: Vec<T>,
    var_b: Vec<T>,
    cov: Vec<T>,
}

fn local_stats<T: Scalar>(blur: &Blur<T>, a: &[T], b: &[T]) -> LocalStats<T> {
    let sq = |x: &[T], y: &[T]| -> Vec<T> { x.iter().zip(y).map(|(&p, &q)| p * q).collect() };
    let mu_a = blur.apply(a);
    let mu_b = blur.apply(b);
    let e_aa = blur.apply(&sq(a, a));
    let e_bb = blur.apply(&sq(b, b));
    let e_ab = blur.apply(&sq(a, b));
    let var_a = e_aa.iter().zip(&mu_a).map(|(&e, &m)| e - m * m).collect();
    let var_b = e_bb.iter().zip(&mu_b).map(|(&e, &m)| e - m * m).collect();
    let cov = e_ab
        .iter()
        .zip(mu_a.iter().zip(&mu_b))
        .map(|(&e, (&ma, &mb))| e - ma * mb)
        .collect();
    LocalStats {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

/// Mean SSIM of two `h x w` planes.
pub(crate) fn ssim_plane<T: Scalar>(
    a: &[T],
    b: &[T],
    h: usize,
    w: usize,
    config: &SsimConfig,
) -> Result<T> {
    let blur = Blur::new(h, w, config)?;
    let s = local_stats(&blur, a, b);
    let (c1, c2) = (T::from_f64_lossy(config.c1), T::from_f64_lossy(config.c2));
    let two = T::from_f64_lossy(2.0);
    let mut total = T::zero();
    for p in 0..s.mu_a.len() {
        let (ma, mb) = (s.mu_a[p], s.mu_b[p]);
        let num = (two * ma * mb + c1) * (two * s.cov[p] + c2);
        let den = (ma * ma + mb * mb + c1) * (s.var_a[p] + s.var_b[p] + c2);
        total += num / den;
    }
    Ok(total / T::from_usize(s.mu_a.len()).unwrap())
}

/// Gradients of [`ssim_plane`] with respect to both planes.
pub(crate) fn ssim_plane_grad<T: Scalar>(
    a: &[T],
    b: &[T],
    h: usize,
    w: usize,
    config: &SsimConfig,
) -> Result<(Vec<T>, Vec<T>)> {
    let blur = Blur::new(h, w, config)?;
    let s = local_stats(&blur, a, b);
    let (c1, c2) = (T::from_f64_lossy(config.c1), T::from_f64_lossy(config.c2));
    let two = T::from_f64_lossy(2.0);
    let m = s.mu_a.len();
    let inv_m = T::one() / T::from_usize(m).unwrap();
    // Sensitivities of the map value to the local moments mu, E[x^2], E[xy].
    let mut d_mu_a = vec![T::zero(); m];
    let mut d_mu_b = vec![T::zero(); m];
    let mut d_sq = vec![T::zero(); m];
    let mut d_ab = vec![T::zero(); m];
    for p in 0..m {
        let (ma, mb) = (s.mu_a[p], s.mu_b[p]);
        let a1 = two * ma * mb + c1;
        let a2 = two * s.cov[p] + c2;
        let b1 = ma * ma + mb * mb + c1;
        let b2 = s.var_a[p] + s.var_b[p] + c2;
        let v = a1 * a2 / (b1 * b2);
        d_mu_a[p] = v * (two * mb / a1 - two * mb / a2 - two * ma / b1 + two * ma / b2) * inv_m;
        d_mu_b[p] = v * (two * ma / a1 - two * ma / a2 - two * mb / b1 + two * mb / b2) * inv_m;
        d_sq[p] = -v / b2 * inv_m;
        d_ab[p] = two * v / a2 * inv_m;
    }
    let (mu_a, mu_b) = (blur.adjoint(&d_mu_a), blur.adjoint(&d_mu_b));
    let sq = blur.adjoint(&d_sq);
    let ab = blur.adjoint(&d_ab);
    let ga = (0..h * w)
        .map(|q| mu_a[q] + two * a[q] * sq[q] + b[q] * ab[q])
        .collect();
    let gb = (0..h * w)
        .map(|q| mu_b[q] + two * b[q] * sq[q] + a[q] * ab[q])
        .collect();
    Ok((ga, gb))
}
