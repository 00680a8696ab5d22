use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::{loss_graph, LossConfig, LossReport, SsimConfig};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::stack;
use crate::models::checkpoint::{Checkpoint, TrainingMetadata};
use crate::models::FusionModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle. Model initialization takes its own seed.
    pub seed: u64,
    pub ssim: SsimConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 2,
            adam: AdamConfig::default(),
            seed: 0,
            ssim: SsimConfig::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.adam.learning_rate > 0.0) || !self.adam.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    /// Mean of the batch reports of every epoch.
    pub history: Vec<LossReport>,
}

pub fn train<T: Scalar>(
    model: &mut FusionModel<T>,
    dataset: &[ImagePair<T>],
    cfg: &TrainRunConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome<T>> {
    train_with(model, dataset, cfg, loss, |_, _| {})
}

/// Trains in place, calling `on_epoch(epoch, report)` after every epoch.
///
/// Each epoch visits the dataset once in a seeded random order, without
/// replacement, in batches of `cfg.batch_size` pairs (the last batch may be
/// smaller).
pub fn train_with<T: Scalar>(
    model: &mut FusionModel<T>,
    dataset: &[ImagePair<T>],
    cfg: &TrainRunConfig,
    loss: &LossConfig,
    mut on_epoch: impl FnMut(usize, &LossReport),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if !model.is_trainable() {
        return Err(Error::NoTrainableParameters(model.name().to_string()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for pair in dataset {
        pair.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut reports = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let x1: Vec<_> = batch.iter().map(|&i| &dataset[i].x1).collect();
            let x2: Vec<_> = batch.iter().map(|&i| &dataset[i].x2).collect();
            let mut graph = Graph::new();
            let v1 = graph.constant(stack(&x1)?);
            let v2 = graph.constant(stack(&x2)?);
            let (y, params) = model.forward_train(&mut graph, v1, v2)?;
            let vars = loss_graph(&mut graph, y, v1, v2, loss, cfg.ssim)?;
            let report = vars.report(&graph);
            if !report.l_total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grads = graph.backward(vars.l_total, &Tensor::scalar(T::one()))?;
            let grads: BTreeMap<String, Tensor<T>> = params
                .iter()
                .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g)))
                .collect();
            adam_step(model.params_mut(), &grads, &mut state, &cfg.adam)?;
            reports.push(report);
        }
        let report = LossReport::mean(&reports).expect("dataset is non-empty");
        if !report.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        on_epoch(epoch, &report);
        history.push(report);
    }
    let metadata = TrainingMetadata {
        epochs: cfg.epochs,
        seed: cfg.seed,
        loss_config: Some(*loss),
        history: history.clone(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model.clone(), metadata),
        history,
    })
}

pub const HISTORY_HEADER: &str = "epoch,l_ssim_mri,l_ssim_pet,l_l2_mri,l_l2_pet,l_total";

/// Writes the loss curves, one row per epoch.
pub fn write_history_csv(history: &[LossReport], mut out: impl Write) -> Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for (i, r) in history.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            r.l_ssim_mri,
            r.l_ssim_pet,
            r.l_l2_mri,
            r.l_l2_pet,
            r.l_total
        )?;
    }
    Ok(())
}
