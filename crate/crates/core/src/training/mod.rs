//! Unsupervised fusion objective, optimizer and training loops.

pub mod adam;
pub mod ssim;
mod sweep;
mod trainer;

use crate::error::{check_range, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::scalar::Scalar;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use ssim::{ssim, ssim_with, SsimConfig};
pub use sweep::{sweep, SweepRow, SweepTable};
pub use trainer::{train, train_with, write_history_csv, TrainOutcome, TrainRunConfig, HISTORY_HEADER};

/// Weights of the combined objective
/// `lambda * L_ssim + (1 - lambda) * L_l2`, where each term balances the
/// first (MRI) and second (PET) input by its gamma.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub gamma_ssim: f64,
    pub gamma_l2: f64,
}

impl LossConfig {
    pub fn new(lambda: f64, gamma_ssim: f64, gamma_l2: f64) -> Result<Self> {
        check_range("lambda", lambda, 0.0, 1.0)?;
        check_range("gamma_ssim", gamma_ssim, 0.0, 1.0)?;
        check_range("gamma_l2", gamma_l2, 0.0, 1.0)?;
        Ok(Self {
            lambda,
            gamma_ssim,
            gamma_l2,
        })
    }

    /// Tuned weights reported for each network after 200 epochs.
    pub fn tuned(kind: crate::models::ModelKind) -> Self {
        use crate::models::ModelKind::*;
        let (gamma_ssim, gamma_l2) = match kind {
            FunFuseAn | WeightedAveraging => (0.47, 0.5),
            MaskNet => (0.5, 0.494),
            DeepFuse => (0.497, 0.5),
            DeepPedestrian => (0.52, 0.5),
        };
        Self {
            lambda: 0.99,
            gamma_ssim,
            gamma_l2,
        }
    }

    /// Cartesian product of the three axes, lambda varying slowest.
    pub fn grid(lambdas: &[f64], gamma_ssims: &[f64], gamma_l2s: &[f64]) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for &l in lambdas {
            for &gs in gamma_ssims {
                for &gl in gamma_l2s {
                    out.push(Self::new(l, gs, gl)?);
                }
            }
        }
        Ok(out)
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::tuned(crate::models::ModelKind::FunFuseAn)
    }
}

/// The partial and combined losses of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_ssim_mri: f64,
    pub l_ssim_pet: f64,
    pub l_l2_mri: f64,
    pub l_l2_pet: f64,
    pub l_ssim: f64,
    pub l_l2: f64,
    pub l_total: f64,
}

impl LossReport {
    /// Composes the combined losses from the four partial losses.
    pub fn from_partials(
        l_ssim_mri: f64,
        l_ssim_pet: f64,
        l_l2_mri: f64,
        l_l2_pet: f64,
        cfg: &LossConfig,
    ) -> Self {
        let l_ssim = cfg.gamma_ssim * l_ssim_mri + (1.0 - cfg.gamma_ssim) * l_ssim_pet;
        let l_l2 = cfg.gamma_l2 * l_l2_mri + (1.0 - cfg.gamma_l2) * l_l2_pet;
        Self {
            l_ssim_mri,
            l_ssim_pet,
            l_l2_mri,
            l_l2_pet,
            l_ssim,
            l_l2,
            l_total: cfg.lambda * l_ssim + (1.0 - cfg.lambda) * l_l2,
        }
    }

    /// `|L_ssim^MRI - L_ssim^PET|`, the balance criterion of the sweep.
    pub fn ssim_imbalance(&self) -> f64 {
        (self.l_ssim_mri - self.l_ssim_pet).abs()
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.l_ssim_mri,
            self.l_ssim_pet,
            self.l_l2_mri,
            self.l_l2_pet,
            self.l_ssim,
            self.l_l2,
            self.l_total,
        ]
    }

    pub fn from_values(v: &[f64]) -> Option<Self> {
        match *v {
            [l_ssim_mri, l_ssim_pet, l_l2_mri, l_l2_pet, l_ssim, l_l2, l_total] => Some(Self {
                l_ssim_mri,
                l_ssim_pet,
                l_l2_mri,
                l_l2_pet,
                l_ssim,
                l_l2,
                l_total,
            }),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Elementwise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let mut acc = [0.0; 7];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = reports.len() as f64;
        Self::from_values(&acc.map(|a| a / n))
    }
}

/// Root-mean-square difference, the per-pixel normalized l2 norm.
pub fn rms_diff<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.check_same_shape(b, "rms_diff")?;
    let ss: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok((ss / T::from_usize(a.data().len()).unwrap()).sqrt())
}

/// Evaluates every loss term for one fused image.
pub fn total_loss<T: Scalar>(
    y: &Image<T>,
    x1: &Image<T>,
    x2: &Image<T>,
    cfg: &LossConfig,
) -> Result<LossReport> {
    y.check_same_shape(x1, "total_loss")?;
    y.check_same_shape(x2, "total_loss")?;
    let one = T::one();
    Ok(LossReport::from_partials(
        (one - ssim(x1, y)?).to_f64_lossy(),
        (one - ssim(x2, y)?).to_f64_lossy(),
        rms_diff(y, x1)?.to_f64_lossy(),
        rms_diff(y, x2)?.to_f64_lossy(),
        cfg,
    ))
}

/// Graph nodes of the objective, all scalar.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_ssim_mri: Var,
    pub l_ssim_pet: Var,
    pub l_l2_mri: Var,
    pub l_l2_pet: Var,
    pub l_ssim: Var,
    pub l_l2: Var,
    pub l_total: Var,
}

impl LossVars {
    pub fn report<T: Scalar>(&self, graph: &Graph<T>) -> LossReport {
        let v = |var: Var| graph.value(var).data()[0].to_f64_lossy();
        LossReport {
            l_ssim_mri: v(self.l_ssim_mri),
            l_ssim_pet: v(self.l_ssim_pet),
            l_l2_mri: v(self.l_l2_mri),
            l_l2_pet: v(self.l_l2_pet),
            l_ssim: v(self.l_ssim),
            l_l2: v(self.l_l2),
            l_total: v(self.l_total),
        }
    }
}

/// Records the objective for `[B, 1, H, W]` fused and input batches.
pub fn loss_graph<T: Scalar>(
    graph: &mut Graph<T>,
    y: Var,
    x1: Var,
    x2: Var,
    cfg: &LossConfig,
    ssim_config: SsimConfig,
) -> Result<LossVars> {
    let c = |v: f64| T::from_f64_lossy(v);
    let s1 = graph.ssim(x1, y, ssim_config)?;
    let s2 = graph.ssim(x2, y, ssim_config)?;
    let l_ssim_mri = graph.affine(s1, -T::one(), T::one());
    let l_ssim_pet = graph.affine(s2, -T::one(), T::one());
    let l_l2_mri = graph.rms_diff(y, x1)?;
    let l_l2_pet = graph.rms_diff(y, x2)?;
    let l_ssim = graph.weighted_sum(&[
        (l_ssim_mri, c(cfg.gamma_ssim)),
        (l_ssim_pet, c(1.0 - cfg.gamma_ssim)),
    ])?;
    let l_l2 = graph.weighted_sum(&[
        (l_l2_mri, c(cfg.gamma_l2)),
        (l_l2_pet, c(1.0 - cfg.gamma_l2)),
    ])?;
    let l_total = graph.weighted_sum(&[(l_ssim, c(cfg.lambda)), (l_l2, c(1.0 - cfg.lambda))])?;
    Ok(LossVars {
        l_ssim_mri,
        l_ssim_pet,
        l_l2_mri,
        l_l2_pet,
        l_ssim,
        l_l2,
        l_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn img(h: usize, w: usize, salt: f64) -> Image<f64> {
        Image::from_fn(h, w, |r, c| 0.5 + 0.4 * ((r as f64 * 0.9 + c as f64 * 1.3 + salt).sin()))
    }

    #[test]
    fn config_validates_range() {
        assert!(LossConfig::new(1.1, 0.5, 0.5).is_err());
        assert!(LossConfig::new(0.5, -0.1, 0.5).is_err());
        assert!(LossConfig::new(0.5, 0.5, f64::NAN).is_err());
        assert_eq!(LossConfig::grid(&[0.5, 1.0], &[0.1, 0.9], &[0.5]).unwrap().len(), 4);
    }

    #[test]
    fn identical_inputs_give_zero_loss() {
        let x = img(16, 16, 0.0);
        let r = total_loss(&x, &x, &x, &LossConfig::default()).unwrap();
        assert!(r.values().iter().all(|v| v.abs() < 1e-12), "{r:?}");
    }

    #[test]
    fn lambda_one_ignores_l2_terms() {
        let (y, a, b) = (img(16, 16, 0.0), img(16, 16, 1.0), img(16, 16, 2.0));
        let cfg = LossConfig::new(1.0, 0.3, 0.5).unwrap();
        let r = total_loss(&y, &a, &b, &cfg).unwrap();
        assert!(r.l_l2 > 0.0);
        assert_eq!(r.l_total, r.l_ssim);
    }

    #[test]
    fn graph_objective_matches_value_path() {
        let (y, a, b) = (img(14, 15, 0.0), img(14, 15, 1.0), img(14, 15, 2.0));
        let cfg = LossConfig::new(0.7, 0.4, 0.6).unwrap();
        let mut g = Graph::new();
        let vy = g.input(y.to_tensor());
        let va = g.constant(a.to_tensor());
        let vb = g.constant(b.to_tensor());
        let vars = loss_graph(&mut g, vy, va, vb, &cfg, SsimConfig::default()).unwrap();
        let from_graph = vars.report(&g);
        let direct = total_loss(&y, &a, &b, &cfg).unwrap();
        for (p, q) in from_graph.values().iter().zip(direct.values()) {
            assert!((p - q).abs() < 1e-14);
        }
        // Gradient of the whole objective against central differences.
        let grads = g.backward(vars.l_total, &Tensor::scalar(1.0)).unwrap();
        let gy = grads.get(vy).unwrap();
        let step = 1e-5;
        for k in [0usize, 17, 100, 209] {
            let mut plus = y.clone().into_data();
            let mut minus = plus.clone();
            plus[k] += step;
            minus[k] -= step;
            let f = |d: Vec<f64>| {
                total_loss(&Image::new(14, 15, d).unwrap(), &a, &b, &cfg).unwrap().l_total
            };
            let fd = (f(plus) - f(minus)) / (2.0 * step);
            assert!((fd - gy.data()[k]).abs() <= 1e-6f64.max(1e-4 * fd.abs()), "{fd} vs {}", gy.data()[k]);
        }
    }
}
