use fuselens_core::data::{synth_pairs, ImagePair, SyntheticSpec};
use fuselens_core::training::{
    adam_step, ssim, sweep, total_loss, train, write_history_csv, AdamConfig, AdamState, HISTORY_HEADER,
};
use fuselens_core::{Error, FusionModel, Image, LossConfig, LossReport, ModelKind, Tensor, TrainRunConfig};
use std::collections::BTreeMap;

fn dataset(count: usize) -> Vec<ImagePair<f64>> {
    synth_pairs(&SyntheticSpec::new(32, 3), count).unwrap()
}

fn short(epochs: usize) -> TrainRunConfig {
    TrainRunConfig { epochs, seed: 4, ..TrainRunConfig::default() }
}

#[test]
fn ssim_examples() {
    let p = &dataset(1)[0];
    assert!((ssim(&p.x1, &p.x1).unwrap() - 1.0).abs() <= 1e-12);
    let c1: f64 = 1e-4;
    let v = ssim(&Image::filled(12, 12, 0.0), &Image::filled(12, 12, 0.5)).unwrap();
    assert!((v - c1 / (0.25 + c1)).abs() < 1e-15);
    assert!(matches!(
        ssim(&Image::filled(10, 30, 0.1), &Image::filled(10, 30, 0.1)),
        Err(Error::WindowTooLarge { .. })
    ));
}

#[test]
fn total_loss_examples() {
    let p = &dataset(1)[0];
    let cfg = LossConfig::new(0.7, 0.3, 0.6).unwrap();
    let r = total_loss(&p.x1, &p.x1, &p.x1, &cfg).unwrap();
    assert!(r.l_total.abs() <= 1e-12 && r.l_ssim_mri.abs() <= 1e-12 && r.l_l2_pet == 0.0);

    let lambda_one = LossConfig::new(1.0, 0.4, 0.9).unwrap();
    let r = total_loss(&p.x2, &p.x1, &p.x2, &lambda_one).unwrap();
    assert_eq!(r.l_total, r.l_ssim);
    assert!(r.l_l2 > 0.0);
}

#[test]
fn table_one_composition() {
    let cfg = LossConfig::tuned(ModelKind::FunFuseAn);
    assert_eq!((cfg.lambda, cfg.gamma_ssim, cfg.gamma_l2), (0.99, 0.47, 0.5));
    let r = LossReport::from_partials(0.2524, 0.2147, 0.0148, 0.0094, &cfg);
    assert!((r.l_total - 0.2303).abs() <= 5e-4, "{}", r.l_total);
    let by_hand = 0.99 * (0.47 * 0.2524 + 0.53 * 0.2147) + 0.01 * (0.5 * 0.0148 + 0.5 * 0.0094);
    assert!((r.l_total - by_hand).abs() <= 1e-15);
}

#[test]
fn loss_config_range() {
    assert!(LossConfig::new(1.1, 0.5, 0.5).is_err());
    assert!(LossConfig::new(0.5, -0.1, 0.5).is_err());
    assert_eq!(LossConfig::grid(&[0.9, 1.0], &[0.1, 0.5, 0.9], &[0.5]).unwrap().len(), 6);
}

#[test]
fn adam_examples() {
    let mut params = BTreeMap::from([("w".to_string(), Tensor::new([3], vec![0.5, -0.5, 0.0]).unwrap())]);
    let grads = BTreeMap::from([("w".to_string(), Tensor::new([3], vec![1.0, -2.0, 0.0]).unwrap())]);
    let mut state = AdamState::new();
    adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
    let w = params["w"].data();
    assert!((w[0] - (0.5f64 - 0.002 / (1.0 + 1e-8))).abs() < 1e-15);
    assert!(w[1] > -0.5);
    assert_eq!(w[2], 0.0);
}

#[test]
fn weighted_average_is_not_trainable() {
    let mut m = FusionModel::<f64>::build(ModelKind::WeightedAveraging, 0);
    let r = train(&mut m, &dataset(2), &short(1), &LossConfig::default());
    assert!(matches!(r, Err(Error::NoTrainableParameters(_))));
}

#[test]
fn empty_dataset_and_bad_config() {
    let mut m = FusionModel::<f64>::build(ModelKind::DeepFuse, 0);
    assert!(matches!(train(&mut m, &[], &short(1), &LossConfig::default()), Err(Error::EmptyDataset)));
    let zero = TrainRunConfig { batch_size: 0, ..short(1) };
    assert!(train(&mut m, &dataset(2), &zero, &LossConfig::default()).is_err());
}

#[test]
fn one_epoch_smoke() {
    let mut m = FusionModel::<f64>::build(ModelKind::FunFuseAn, 1);
    let out = train(&mut m, &dataset(2), &short(1), &LossConfig::default()).unwrap();
    assert_eq!(out.history.len(), 1);
    assert!(out.history[0].is_finite());
    assert_eq!(out.checkpoint.metadata.epochs, 1);
    assert_eq!(out.checkpoint.model.params(), m.params());
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = dataset(4);
    let run = || {
        let mut m = FusionModel::<f64>::build(ModelKind::DeepFuse, 8);
        train(&mut m, &data, &short(3), &LossConfig::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let bits = |h: &[LossReport]| h.iter().flat_map(|r| r.values().map(f64::to_bits)).collect::<Vec<_>>();
    assert_eq!(bits(&a.history), bits(&b.history));
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let mut m = FusionModel::<f64>::build(ModelKind::DeepFuse, 2);
    let out = train(&mut m, &dataset(2), &short(5), &LossConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_history_csv(&out.history, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HISTORY_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("5,"));
}

#[test]
fn one_cell_sweep_equals_direct_training() {
    let data = dataset(2);
    let cfg = LossConfig::new(0.9, 0.4, 0.5).unwrap();
    let table = sweep(ModelKind::DeepFuse, 6, &[cfg], &data, &short(2)).unwrap();
    let mut m = FusionModel::<f64>::build(ModelKind::DeepFuse, 6);
    let direct = train(&mut m, &data, &short(2), &cfg).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].report, *direct.history.last().unwrap());
}

#[test]
fn sweep_grid_and_balance_selection() {
    let data = dataset(2);
    let grid = LossConfig::grid(&[0.99], &[0.1, 0.5, 0.9], &[0.5]).unwrap();
    let mut table = sweep(ModelKind::DeepFuse, 1, &grid, &data, &short(2)).unwrap();
    assert_eq!(table.rows.len(), 3);
    let best = *table.best_balance().unwrap();
    assert!(table.rows.iter().all(|r| best.report.ssim_imbalance() <= r.report.ssim_imbalance()));
    table.sort_by_balance();
    assert_eq!(table.rows[0], best);

    let grid = LossConfig::grid(&[0.9, 0.99, 1.0], &[0.3, 0.5, 0.7], &[0.5]).unwrap();
    let table = sweep(ModelKind::DeepFuse, 1, &grid, &data, &short(1)).unwrap();
    assert_eq!(table.rows.len(), 9);
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 10);
}
