//! `hsie`: synthesize paired data, train, enhance, run baselines, evaluate
//! and self-verify.
//!
//! Exit codes: 0 success, 1 validation, 2 I/O or file format, 3 numeric
//! failure, 4 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod exit;
mod preview;

use exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "hsie", version, about = "Low-light hyperspectral image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic clean/low-light cube pairs and a manifest.
    Synth(SynthArgs),
    /// Split every band of a cube into high- and low-frequency cubes.
    Decompose(DecomposeArgs),
    /// Train a model on the pairs listed in a synth manifest.
    Train(TrainArgs),
    /// Enhance a cube band by band with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Apply a classical band-wise enhancement method.
    Baseline(BaselineArgs),
    /// Compare a test cube against a reference.
    Eval(EvalArgs),
    /// Run the gradient, pyramid and metric self-check suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Architecture of the published model.
    Full,
    /// Small network that trains in minutes on a CPU.
    Desk,
}

/// Degradation overrides; unset flags fall back to the config file, then
/// to the built-in defaults.
#[derive(Debug, Args)]
pub struct DegradeFlags {
    #[arg(long)]
    pub gain: Option<f32>,
    #[arg(long)]
    pub gain_variation: Option<f32>,
    #[arg(long)]
    pub noise_sigma: Option<f32>,
    #[arg(long)]
    pub impulse: Option<f32>,
    #[arg(long)]
    pub stripes: Option<f32>,
    #[arg(long)]
    pub stripe_amplitude: Option<f32>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub scenes: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub bands: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file; only its `degrade` section is used here.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub degrade: DegradeFlags,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for the `high` and `low` cubes.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding `manifest.json` from `hsie synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the step log is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base model architecture before the config file is applied.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Scene index in the manifest held out for per-epoch validation
    /// instead of training.
    #[arg(long)]
    pub validate_scene: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feed values as stored even if they leave `[0, 1]`.
    #[arg(long)]
    pub no_normalize: bool,
    /// Expected architecture (`model` section); a checkpoint that does not
    /// match is rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    He,
    Clahe,
    Msr,
    Mr,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-band PSNR as `band,psnr` rows.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    PyramidKernel,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<FaultArg>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HSIE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::validation(format!("HSIE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::validation(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Train(a) => commands::train(&a),
        Command::Enhance(a) => commands::enhance(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Verify(a) => commands::verify(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::VALIDATION } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
