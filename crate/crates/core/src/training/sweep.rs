use std::io::Write;

use rayon::prelude::*;

use super::{train, LossConfig, LossReport, TrainRunConfig};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::models::{FusionModel, ModelKind};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub config: LossConfig,
    /// Report of the last epoch.
    pub report: LossReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub model: ModelKind,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// The row whose SSIM losses of the two inputs are closest.
    pub fn best_balance(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .min_by(|a, b| a.report.ssim_imbalance().total_cmp(&b.report.ssim_imbalance()))
    }

    pub fn sort_by_balance(&mut self) {
        self.rows
            .sort_by(|a, b| a.report.ssim_imbalance().total_cmp(&b.report.ssim_imbalance()));
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "lambda,gamma_ssim,gamma_l2,l_ssim_mri,l_ssim_pet,l_l2_mri,l_l2_pet,l_ssim,l_l2,l_total,ssim_imbalance"
        )?;
        for row in &self.rows {
            let c = row.config;
            let v = row.report.values();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.lambda,
                c.gamma_ssim,
                c.gamma_l2,
                v[0],
                v[1],
                v[2],
                v[3],
                v[4],
                v[5],
                v[6],
                row.report.ssim_imbalance()
            )?;
        }
        Ok(())
    }
}

/// Trains one fresh model per grid cell (all initialized from `model_seed`)
/// and tabulates the final reports. Cells run in parallel.
pub fn sweep<T: Scalar>(
    kind: ModelKind,
    model_seed: u64,
    grid: &[LossConfig],
    dataset: &[ImagePair<T>],
    cfg: &TrainRunConfig,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let rows = grid
        .par_iter()
        .map(|config| {
            let mut model = FusionModel::build(kind, model_seed);
            let outcome = train(&mut model, dataset, cfg, config)?;
            Ok(SweepRow {
                config: *config,
                report: *outcome.history.last().expect("epochs >= 1"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { model: kind, rows })
}
