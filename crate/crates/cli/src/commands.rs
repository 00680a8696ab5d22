use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fuselens_core::data::{load_manifest, save_image, synth_pairs, ImagePair, SyntheticSpec};
use fuselens_core::saliency::{
    gamma_correct, guidance_pair, guidance_rgb, jacobian_pair, joint_normalize, scatter_data, write_scatter_csv,
    DisplayConfig, GuidanceOptions,
};
use fuselens_core::training::{sweep as run_sweep, train_with, write_history_csv, AdamConfig};
use fuselens_core::{Checkpoint, Error as CoreError, FusionModel, Image, LossConfig, ModelKind, TrainRunConfig};
use fuselens_service::{Config, ServiceError};
use rand::{Rng, SeedableRng};

use crate::{BenchArgs, DataArgs, ExportArgs, GuidanceArgs, LossArgs, ModelArgs, RunArgs, ServeArgs, SweepArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        use CoreError::*;
        match e {
            UnknownModel(_) | NoTrainableParameters(_) | InvalidConfig(_) | OutOfRange { .. } | InvalidPixel { .. }
            | Manifest { .. } | EmptyDataset | EmptyGrid => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Usage(format!("{context}: {e}"))
}

fn parse_model(name: &str) -> Result<ModelKind> {
    name.parse().map_err(|_| {
        let known: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Usage(format!("unknown model {name:?} (expected one of {})", known.join(", ")))
    })
}

fn dataset(args: &DataArgs, default_resolution: usize, default_pairs: usize) -> Result<Vec<ImagePair<f64>>> {
    match &args.data {
        Some(path) => load_manifest(path).map_err(usage("dataset")),
        None => {
            let spec = SyntheticSpec::new(args.resolution.unwrap_or(default_resolution), args.data_seed);
            spec.validate().map_err(usage("synthetic data"))?;
            Ok(synth_pairs(&spec, args.pairs.unwrap_or(default_pairs))?)
        }
    }
}

fn select_pair(set: Vec<ImagePair<f64>>, id: Option<&str>) -> Result<ImagePair<f64>> {
    match id {
        None => set.into_iter().next().ok_or_else(|| CliError::Usage("dataset is empty".into())),
        Some(id) => set
            .into_iter()
            .find(|p| p.id == id)
            .ok_or_else(|| CliError::Usage(format!("no pair with id {id:?}"))),
    }
}

fn loss_config(kind: ModelKind, args: &LossArgs) -> Result<LossConfig> {
    let tuned = LossConfig::tuned(kind);
    Ok(LossConfig::new(
        args.lambda.unwrap_or(tuned.lambda),
        args.gamma_ssim.unwrap_or(tuned.gamma_ssim),
        args.gamma_l2.unwrap_or(tuned.gamma_l2),
    )?)
}

fn run_config(args: &RunArgs) -> Result<TrainRunConfig> {
    let cfg = TrainRunConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        adam: AdamConfig {
            learning_rate: args.learning_rate,
            ..AdamConfig::default()
        },
        seed: args.seed,
        ..TrainRunConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(args: &ModelArgs) -> Result<FusionModel<f64>> {
    match (&args.checkpoint, &args.model) {
        (Some(path), _) => Ok(Checkpoint::<f64>::load(path).map_err(usage(&path.display().to_string()))?.model),
        (None, Some(name)) => Ok(FusionModel::build(parse_model(name)?, args.seed)),
        (None, None) => Err(CliError::Usage("one of --checkpoint or --model is required".into())),
    }
}

fn writable(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::Usage(format!("directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(usage(&path.display().to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let kind = parse_model(&a.model)?;
    let loss = loss_config(kind, &a.loss)?;
    let cfg = run_config(&a.run)?;
    let mut model = FusionModel::<f64>::build(kind, a.run.seed);
    if !model.is_trainable() {
        return Err(CoreError::NoTrainableParameters(kind.name().into()).into());
    }
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    writable(&a.out)?;
    writable(&history_path)?;
    let set = dataset(&a.data, 32, 16)?;
    let start = Instant::now();
    let outcome = train_with(&mut model, &set, &cfg, &loss, |epoch, r| {
        if !a.quiet {
            eprintln!(
                "epoch {epoch:>4}  l_total {:.5}  l_ssim {:.5}/{:.5}  l_l2 {:.5}/{:.5}",
                r.l_total, r.l_ssim_mri, r.l_ssim_pet, r.l_l2_mri, r.l_l2_pet
            );
        }
    })
    .map_err(|e| match e {
        CoreError::Diverged { .. } => CliError::Runtime(format!("training failed: {e}")),
        other => other.into(),
    })?;
    outcome.checkpoint.save(&a.out)?;
    write_history_csv(&outcome.history, create(&history_path)?)?;
    let last = outcome.history.last().expect("epochs >= 1");
    println!(
        "{} trained for {} epochs on {} pairs in {:.1}s; final l_total {:.5}",
        kind.name(),
        cfg.epochs,
        set.len(),
        start.elapsed().as_secs_f64(),
        last.l_total
    );
    println!("checkpoint: {}", a.out.display());
    println!("history:    {}", history_path.display());
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let kind = parse_model(&a.model)?;
    let tuned = LossConfig::tuned(kind);
    let axis = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let grid = LossConfig::grid(
        &axis(&a.lambda, tuned.lambda),
        &axis(&a.gamma_ssim, tuned.gamma_ssim),
        &axis(&a.gamma_l2, tuned.gamma_l2),
    )?;
    let cfg = run_config(&a.run)?;
    if !FusionModel::<f64>::build(kind, 0).is_trainable() {
        return Err(CoreError::NoTrainableParameters(kind.name().into()).into());
    }
    writable(&a.out)?;
    let set = dataset(&a.data, 32, 16)?;
    let start = Instant::now();
    let table = run_sweep(kind, a.run.seed, &grid, &set, &cfg)?;
    table.write_csv(create(&a.out)?)?;
    println!(
        "{} grid cells x {} epochs in {:.1}s -> {}",
        grid.len(),
        cfg.epochs,
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    if let Some(best) = table.best_balance() {
        let c = best.config;
        println!(
            "most balanced: lambda {} gamma_ssim {} gamma_l2 {}  |l_ssim_mri - l_ssim_pet| {:.5}  l_total {:.5}",
            c.lambda,
            c.gamma_ssim,
            c.gamma_l2,
            best.report.ssim_imbalance(),
            best.report.l_total
        );
    }
    Ok(())
}

fn normalized_pair(a: &Image<f64>, b: &Image<f64>, gamma: f64) -> Result<(Image<f64>, Image<f64>)> {
    let (na, nb) = joint_normalize(a, b)?;
    Ok((gamma_correct(&na, gamma)?, gamma_correct(&nb, gamma)?))
}

pub fn guidance(a: GuidanceArgs) -> Result<()> {
    DisplayConfig::new(1.0, a.gamma)?;
    let model = load_model(&a.model)?;
    let pair = select_pair(dataset(&a.data, 128, 1)?, a.pair.as_deref())?;
    out_dir(&a.out)?;
    let pass = model.retain(&pair.x1, &pair.x2)?;
    let n = pass.shape.n();
    let start = Instant::now();
    let (g1, g2) = guidance_pair(&pass, GuidanceOptions { block_size: a.block_size }, |_, _| {}, None)?;
    let took = start.elapsed().as_secs_f64();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    let checks = 10.min(n);
    for _ in 0..checks {
        let i = rng.random_range(1..=n);
        let (j1, j2) = jacobian_pair(&pass, i)?;
        worst = worst
            .max((j1.values.data()[i - 1] - g1.values.data()[i - 1]).abs())
            .max((j2.values.data()[i - 1] - g2.values.data()[i - 1]).abs());
    }
    if worst > 1e-9 {
        return Err(CliError::Runtime(format!("guidance disagrees with single-pixel Jacobians by {worst:e}")));
    }

    let (d1, d2) = normalized_pair(&g1.values, &g2.values, a.gamma)?;
    save_image(&d1, a.out.join("guidance_x1.png"))?;
    save_image(&d2, a.out.join("guidance_x2.png"))?;
    save_image(&pass.fused(), a.out.join("fused.png"))?;
    std::fs::write(a.out.join("guidance_rgb.png"), guidance_rgb(&g1, &g2, &pass.fused())?.to_png()?)?;
    println!(
        "{} on {} ({}x{}): guidance in {:.3}s ({:.3} ms/pixel)",
        model.name(),
        pair.id,
        pass.shape.height,
        pass.shape.width,
        took,
        took * 1e3 / n as f64
    );
    println!("consistency: {checks} pixels, max |guidance - jacobian diagonal| = {worst:.3e}");
    println!("wrote guidance_x1.png guidance_x2.png guidance_rgb.png fused.png to {}", a.out.display());
    Ok(())
}

pub fn export(a: ExportArgs) -> Result<()> {
    let display = DisplayConfig::new(a.gamma1, a.gamma2)?;
    let model = load_model(&a.model)?;
    let pair = select_pair(dataset(&a.data, 128, 1)?, a.pair.as_deref())?;
    let pass = model.retain(&pair.x1, &pair.x2)?;
    pass.shape.pixel(a.pixel)?;
    out_dir(&a.out)?;
    let (j1, j2) = jacobian_pair(&pass, a.pixel)?;
    let (g1, g2) = guidance_pair(&pass, GuidanceOptions::default(), |_, _| {}, None)?;
    let fused = pass.fused();

    save_image(&pair.x1, a.out.join("x1.png"))?;
    save_image(&pair.x2, a.out.join("x2.png"))?;
    save_image(&fused, a.out.join("fused.png"))?;
    let (d1, d2) = normalized_pair(&j1.values, &j2.values, display.gamma_corr1)?;
    save_image(&d1, a.out.join("jacobian_x1.png"))?;
    save_image(&d2, a.out.join("jacobian_x2.png"))?;
    let (d1, d2) = normalized_pair(&g1.values, &g2.values, display.gamma_corr2)?;
    save_image(&d1, a.out.join("guidance_x1.png"))?;
    save_image(&d2, a.out.join("guidance_x2.png"))?;
    std::fs::write(a.out.join("guidance_rgb.png"), guidance_rgb(&g1, &g2, &fused)?.to_png()?)?;
    let scatter = scatter_data(&g1, &g2, a.pixel, a.radius)?;
    write_scatter_csv(&scatter, create(&a.out.join("scatter.csv"))?)?;

    println!(
        "pixel {}: dy/dx1 = {:.6e}, dy/dx2 = {:.6e}",
        a.pixel,
        j1.values.data()[a.pixel - 1],
        j2.values.data()[a.pixel - 1]
    );
    match scatter.correlation {
        Some(r) => println!("neighborhood correlation (radius {}): {r:.4}", a.radius),
        None => println!("neighborhood correlation (radius {}): undefined", a.radius),
    }
    println!("wrote 9 files to {}", a.out.display());
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.hovers == 0 {
        return Err(CliError::Usage("--hovers must be positive".into()));
    }
    let model = load_model(&a.model)?;
    let pair = select_pair(dataset(&a.data, 128, 1)?, a.pair.as_deref())?;
    let t0 = Instant::now();
    let pass = model.retain(&pair.x1, &pair.x2)?;
    let forward = t0.elapsed().as_secs_f64();
    let n = pass.shape.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.pixel_seed);
    let mut times = Vec::with_capacity(a.hovers);
    for _ in 0..a.hovers {
        let i = rng.random_range(1..=n);
        let t = Instant::now();
        std::hint::black_box(jacobian_pair(&pass, i)?);
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    println!(
        "{} on {} ({}x{}), {} parameters; retained forward pass {:.4} s",
        model.name(),
        pair.id,
        pass.shape.height,
        pass.shape.width,
        model.parameter_count(),
        forward
    );
    println!(
        "{} hovers: mean {:.6} s/hover, median {:.6} s, {:.1} fps",
        a.hovers,
        mean,
        times[times.len() / 2],
        1.0 / mean
    );
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let mut config = Config::load(a.config.as_deref())?;
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(port) = a.port {
        config.port = port;
    }
    if let Some(dir) = a.data_dir {
        config.data_dir = Some(dir);
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(fuselens_service::serve(config))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_are_usage_and_divergence_is_runtime() {
        assert_eq!(CliError::from(CoreError::UnknownModel("x".into())).code(), 2);
        assert_eq!(CliError::from(CoreError::InvalidPixel { index: 0, n: 4 }).code(), 2);
        assert_eq!(CliError::from(CoreError::Diverged { epoch: 3 }).code(), 1);
        assert_eq!(CliError::from(ServiceError::Config("port".into())).code(), 2);
    }

    #[test]
    fn loss_flags_override_tuned_weights_one_at_a_time() {
        let args = LossArgs {
            lambda: None,
            gamma_ssim: Some(0.25),
            gamma_l2: None,
        };
        let tuned = LossConfig::tuned(ModelKind::MaskNet);
        let got = loss_config(ModelKind::MaskNet, &args).unwrap();
        assert_eq!((got.lambda, got.gamma_ssim, got.gamma_l2), (tuned.lambda, 0.25, tuned.gamma_l2));
    }

    #[test]
    fn model_names_parse_case_insensitively() {
        assert_eq!(parse_model("deeppedestrian").unwrap(), ModelKind::DeepPedestrian);
        assert!(matches!(parse_model("resnet"), Err(CliError::Usage(_))));
    }
}
