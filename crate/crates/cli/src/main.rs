//! `fuselens`: train fusion networks, compute saliency images, benchmark hovers, serve.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fuselens", version, about = "Train image-fusion networks and explain them with Jacobian saliency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a checkpoint plus a per-epoch loss CSV.
    Train(TrainArgs),
    /// Train one fresh model per loss-weight combination and tabulate final losses.
    Sweep(SweepArgs),
    /// Compute both guidance images and write them as PNGs.
    Guidance(GuidanceArgs),
    /// Write inputs, fused image, Jacobians and the scatter CSV for one pixel.
    Export(ExportArgs),
    /// Time Jacobian computation over random principle pixels.
    Bench(BenchArgs),
    /// Run the HTTP/WebSocket service.
    Serve(ServeArgs),
}

/// Where image pairs come from: a manifest, or the synthetic generator.
#[derive(Args, Clone)]
pub struct DataArgs {
    /// Manifest file with `id x1 x2` lines; synthetic pairs are used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic image side length.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Number of synthetic pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Args, Clone)]
pub struct LossArgs {
    /// Weight of the SSIM term; defaults to the model's tuned weights.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma_ssim: Option<f64>,
    #[arg(long)]
    pub gamma_l2: Option<f64>,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub learning_rate: f64,
    /// Seeds model initialization and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-curve CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated grid axis; defaults to the tuned value.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gamma_ssim: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gamma_l2: Vec<f64>,
    /// Table CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// A trained checkpoint, or a freshly initialized model.
#[derive(Args, Clone)]
pub struct ModelArgs {
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Initialization seed for `--model`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct GuidanceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Pair id; defaults to the first pair.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub block_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub pair: Option<String>,
    /// 1-based row-major principle pixel.
    #[arg(long)]
    pub pixel: usize,
    #[arg(long, default_value_t = 10)]
    pub radius: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma2: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub hovers: usize,
    /// Seeds the principle-pixel draw.
    #[arg(long, default_value_t = 0)]
    pub pixel_seed: u64,
}

#[derive(Args)]
pub struct ServeArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Guidance(a) => commands::guidance(a),
        Command::Export(a) => commands::export(a),
        Command::Bench(a) => commands::bench(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fuselens: {e}");
            ExitCode::from(e.code())
        }
    }
}
