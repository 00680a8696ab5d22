//! Fusion models: four convolutional networks and weighted averaging.

pub mod arch;
pub mod checkpoint;
pub mod weighted;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{BatchNormMode, Graph, RunningStats, Var};
use crate::image::{Image, ImageShape, Modality};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
pub use arch::{Activation, ArchitectureSpec, Layer, ParamGroup, Source};
pub use weighted::{analytic_wavg_gradient, weighted_average, WeightedAverageResult};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    FunFuseAn,
    MaskNet,
    DeepFuse,
    DeepPedestrian,
    WeightedAveraging,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::FunFuseAn,
        ModelKind::MaskNet,
        ModelKind::DeepFuse,
        ModelKind::DeepPedestrian,
        ModelKind::WeightedAveraging,
    ];

    pub const NEURAL: [ModelKind; 4] = [
        ModelKind::FunFuseAn,
        ModelKind::MaskNet,
        ModelKind::DeepFuse,
        ModelKind::DeepPedestrian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FunFuseAn => "FunFuseAn",
            ModelKind::MaskNet => "MaskNet",
            ModelKind::DeepFuse => "DeepFuse",
            ModelKind::DeepPedestrian => "DeepPedestrian",
            ModelKind::WeightedAveraging => "WeightedAveraging",
        }
    }

    pub fn architecture(self) -> Option<ArchitectureSpec> {
        match self {
            ModelKind::FunFuseAn => Some(ArchitectureSpec::fun_fuse_an()),
            ModelKind::MaskNet => Some(ArchitectureSpec::mask_net()),
            ModelKind::DeepFuse => Some(ArchitectureSpec::deep_fuse()),
            ModelKind::DeepPedestrian => Some(ArchitectureSpec::deep_pedestrian()),
            ModelKind::WeightedAveraging => None,
        }
    }

    /// The neural model with the fewest trainable parameters.
    pub fn smallest_neural() -> ModelKind {
        Self::NEURAL
            .into_iter()
            .min_by_key(|k| FusionModel::<f32>::build(*k, 0).parameter_count())
            .expect("non-empty")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// A fusion model with its parameters and batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel<T> {
    kind: ModelKind,
    arch: Option<ArchitectureSpec>,
    params: BTreeMap<String, Tensor<T>>,
    stats: BTreeMap<String, RunningStats<T>>,
}

/// Whether a forward pass trains (batch statistics, parameters as
/// differentiable leaves) or evaluates (running statistics, constants).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

/// Parameter leaves of a training forward pass, keyed by parameter name.
pub type ParamVars = BTreeMap<String, Var>;

/// One forward pass whose activations are kept for repeated backward passes.
#[derive(Debug)]
pub struct RetainedPass<T> {
    pub graph: Graph<T>,
    pub x1: Var,
    pub x2: Var,
    pub output: Var,
    pub shape: ImageShape,
    pub kind: ModelKind,
}

impl<T: Scalar> RetainedPass<T> {
    pub fn fused(&self) -> Image<T> {
        Image::from_tensor(self.graph.value(self.output), 0).expect("output is [1,1,H,W]")
    }

    pub fn input(&self, modality: Modality) -> Var {
        match modality {
            Modality::First => self.x1,
            Modality::Second => self.x2,
        }
    }
}

/// Builds a model by name with freshly initialized parameters.
pub fn build_model<T: Scalar>(name: &str, seed: u64) -> Result<FusionModel<T>> {
    Ok(FusionModel::build(name.parse()?, seed))
}

impl<T: Scalar> FusionModel<T> {
    /// Initializes every convolution weight and bias uniformly in
    /// `+-1/sqrt(fan_in)` from a ChaCha stream seeded with `seed`.
    pub fn build(kind: ModelKind, seed: u64) -> Self {
        let arch = kind.architecture();
        let mut params = BTreeMap::new();
        let mut stats = BTreeMap::new();
        if let Some(arch) = &arch {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for g in arch.param_groups() {
                let fan_in = g.in_channels * g.kernel * g.kernel;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut uniform = |n: usize| -> Vec<T> {
                    (0..n)
                        .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                        .collect()
                };
                let w = uniform(g.out_channels * fan_in);
                let b = uniform(g.out_channels);
                params.insert(
                    format!("{}.weight", g.name),
                    Tensor::from_parts(vec![g.out_channels, g.in_channels, g.kernel, g.kernel], w),
                );
                params.insert(
                    format!("{}.bias", g.name),
                    Tensor::from_parts(vec![g.out_channels], b),
                );
                if g.batch_norm {
                    params.insert(
                        format!("{}.bn.gamma", g.name),
                        Tensor::full(vec![g.out_channels], T::one()),
                    );
                    params.insert(
                        format!("{}.bn.beta", g.name),
                        Tensor::zeros(vec![g.out_channels]),
                    );
                    stats.insert(g.name.clone(), RunningStats::new(g.out_channels));
                }
            }
        }
        Self {
            kind,
            arch,
            params,
            stats,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn architecture(&self) -> Option<&ArchitectureSpec> {
        self.arch.as_ref()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn running_stats(&self) -> &BTreeMap<String, RunningStats<T>> {
        &self.stats
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn is_trainable(&self) -> bool {
        !self.params.is_empty()
    }

    /// Replaces parameters and statistics; shapes must match the architecture.
    pub(crate) fn restore(
        &mut self,
        params: BTreeMap<String, Tensor<T>>,
        stats: BTreeMap<String, RunningStats<T>>,
    ) -> Result<()> {
        for (name, t) in &self.params {
            let new = params
                .get(name)
                .ok_or_else(|| Error::MissingParameter(name.clone()))?;
            if new.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    new.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        for (name, s) in &self.stats {
            let new = stats
                .get(name)
                .ok_or_else(|| Error::MissingParameter(format!("{name}.bn.running_mean")))?;
            if new.mean.len() != s.mean.len() || new.var.len() != s.var.len() {
                return Err(Error::Checkpoint(format!("running stats of {name} mismatch")));
            }
        }
        self.params = params;
        self.stats = stats;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    /// Fuses two same-shaped images in `[0, 1]` (evaluation mode).
    pub fn fuse(&self, x1: &Image<T>, x2: &Image<T>) -> Result<Image<T>> {
        check_inputs(x1, x2)?;
        let mut g = Graph::new();
        let a = g.constant(x1.to_tensor());
        let b = g.constant(x2.to_tensor());
        let y = self.forward(&mut g, a, b)?;
        Image::from_tensor(g.value(y), 0)
    }

    /// Runs the model in evaluation mode on `[B, 1, H, W]` inputs already in
    /// `graph`. Parameters enter as constants.
    pub fn forward(&self, graph: &mut Graph<T>, x1: Var, x2: Var) -> Result<Var> {
        let params = self.param_leaves(graph, false);
        let mut stats = self.stats.clone();
        self.run(graph, x1, x2, &params, &mut stats, Mode::Eval)
    }

    /// Training forward pass: batch statistics (folded into the running
    /// statistics) and parameters as differentiable leaves.
    pub fn forward_train(
        &mut self,
        graph: &mut Graph<T>,
        x1: Var,
        x2: Var,
    ) -> Result<(Var, ParamVars)> {
        let params = self.param_leaves(graph, true);
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.run(graph, x1, x2, &params, &mut stats, Mode::Train);
        self.stats = stats;
        Ok((out?, params))
    }

    /// Evaluation forward pass with both inputs differentiable, kept for
    /// saliency queries.
    pub fn retain(&self, x1: &Image<T>, x2: &Image<T>) -> Result<RetainedPass<T>> {
        check_inputs(x1, x2)?;
        let mut graph = Graph::new();
        let a = graph.input(x1.to_tensor());
        let b = graph.input(x2.to_tensor());
        let output = self.forward(&mut graph, a, b)?;
        Ok(RetainedPass {
            graph,
            x1: a,
            x2: b,
            output,
            shape: x1.shape(),
            kind: self.kind,
        })
    }

    fn param_leaves(&self, graph: &mut Graph<T>, requires_grad: bool) -> ParamVars {
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), graph.leaf(t.clone(), requires_grad)))
            .collect()
    }

    fn run(
        &self,
        graph: &mut Graph<T>,
        x1: Var,
        x2: Var,
        params: &ParamVars,
        stats: &mut BTreeMap<String, RunningStats<T>>,
        mode: Mode,
    ) -> Result<Var> {
        let Some(arch) = &self.arch else {
            return graph.weighted_average(x1, x2);
        };
        let param = |name: String| -> Result<Var> {
            params
                .get(&name)
                .copied()
                .ok_or(Error::MissingParameter(name))
        };
        let mut outs: Vec<Var> = Vec::with_capacity(arch.layers.len());
        let src = |outs: &[Var], s: Source| match s {
            Source::Input(Modality::First) => x1,
            Source::Input(Modality::Second) => x2,
            Source::Layer(k) => outs[k],
        };
        for layer in &arch.layers {
            let v = match layer {
                Layer::Conv {
                    from,
                    group,
                    batch_norm,
                    activation,
                    ..
                } => {
                    let mut v = graph.conv2d(
                        src(&outs, *from),
                        param(format!("{group}.weight"))?,
                        param(format!("{group}.bias"))?,
                    )?;
                    if *batch_norm {
                        let gamma = param(format!("{group}.bn.gamma"))?;
                        let beta = param(format!("{group}.bn.beta"))?;
                        let running = stats
                            .get_mut(group)
                            .ok_or_else(|| Error::MissingParameter(format!("{group}.bn.running_mean")))?;
                        let eps = T::from_f64_lossy(BN_EPS);
                        let bn_mode = match mode {
                            Mode::Train => BatchNormMode::Train {
                                running,
                                momentum: T::from_f64_lossy(BN_MOMENTUM),
                            },
                            Mode::Eval => BatchNormMode::Eval(running),
                        };
                        v = graph.batch_norm(v, gamma, beta, eps, bn_mode)?;
                    }
                    match activation {
                        Activation::Identity => v,
                        Activation::LeakyRelu => graph.leaky_relu(v, T::from_f64_lossy(LEAKY_SLOPE)),
                    }
                }
                Layer::Concat(parts) => {
                    let vars: Vec<Var> = parts.iter().map(|p| src(&outs, *p)).collect();
                    graph.concat_channels(&vars)?
                }
                Layer::Add(a, b) => graph.add(src(&outs, *a), src(&outs, *b))?,
                Layer::Output(from) => {
                    let t = graph.tanh(src(&outs, *from));
                    let half = T::from_f64_lossy(0.5);
                    graph.affine(t, half, half)
                }
            };
            outs.push(v);
        }
        Ok(*outs.last().expect("architecture has layers"))
    }
}

fn check_inputs<T: Scalar>(x1: &Image<T>, x2: &Image<T>) -> Result<()> {
    x1.check_same_shape(x2, "fuse")?;
    x1.check_unit_range("x1")?;
    x2.check_unit_range("x2")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(h: usize, w: usize) -> (Image<f64>, Image<f64>) {
        let a = Image::from_fn(h, w, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        let b = Image::from_fn(h, w, |r, c| ((r * 5 + c * 2) % 13) as f64 / 12.0);
        (a, b)
    }

    #[test]
    fn names_parse_case_insensitively() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().to_lowercase().parse::<ModelKind>().unwrap(), k);
        }
        assert!(matches!(
            build_model::<f64>("UNet", 0),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        for k in ModelKind::NEURAL {
            let a = FusionModel::<f64>::build(k, 11);
            let b = FusionModel::<f64>::build(k, 11);
            let c = FusionModel::<f64>::build(k, 12);
            assert_eq!(a, b);
            assert_ne!(a.params(), c.params());
        }
    }

    #[test]
    fn weighted_averaging_has_no_parameters() {
        let m = FusionModel::<f64>::build(ModelKind::WeightedAveraging, 0);
        assert_eq!(m.parameter_count(), 0);
        assert!(!m.is_trainable());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = FusionModel::<f64>::build(ModelKind::FunFuseAn, 3);
        let w = &m.params()["fusion.weight"];
        let bound = 1.0 / ((32 * 9) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn fuse_preserves_shape_and_unit_range() {
        let (a, b) = inputs(9, 12);
        for k in ModelKind::ALL {
            let m = FusionModel::<f64>::build(k, 5);
            let y = m.fuse(&a, &b).unwrap();
            assert_eq!(y.shape(), a.shape());
            assert!(y.check_unit_range("y").is_ok(), "{k}");
        }
    }

    #[test]
    fn fuse_is_deterministic() {
        let (a, b) = inputs(8, 8);
        let m = FusionModel::<f64>::build(ModelKind::MaskNet, 1);
        assert_eq!(m.fuse(&a, &b).unwrap(), m.fuse(&a, &b).unwrap());
    }

    #[test]
    fn fuse_rejects_bad_inputs() {
        let m = FusionModel::<f64>::build(ModelKind::DeepFuse, 1);
        let (a, _) = inputs(8, 8);
        assert!(m.fuse(&a, &Image::filled(8, 9, 0.5)).is_err());
        assert!(m.fuse(&a, &Image::filled(8, 8, 1.5)).is_err());
    }

    #[test]
    fn weighted_averaging_model_matches_closed_form() {
        let (a, b) = inputs(6, 7);
        let m = FusionModel::<f64>::build(ModelKind::WeightedAveraging, 0);
        let y = m.fuse(&a, &b).unwrap();
        let expected = weighted_average(&a, &b).unwrap().fused;
        assert_eq!(y, expected);
    }

    #[test]
    fn generic_over_f32() {
        let (a, b) = inputs(8, 8);
        let m = FusionModel::<f32>::build(ModelKind::FunFuseAn, 2);
        let y = m.fuse(&a.cast(), &b.cast()).unwrap();
        let y64 = FusionModel::<f64>::build(ModelKind::FunFuseAn, 2).fuse(&a, &b).unwrap();
        for (p, q) in y.data().iter().zip(y64.data()) {
            assert!((*p as f64 - q).abs() < 1e-4);
        }
    }

    #[test]
    fn smallest_model_is_deep_fuse() {
        assert_eq!(ModelKind::smallest_neural(), ModelKind::DeepFuse);
    }
}
