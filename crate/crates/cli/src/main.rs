//! `mpseg`: one binary for every pipeline stage.

mod commands;
mod config;
mod error;
mod run;

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpseg_core::dataio::{Background, Cohort, Split, SplitRatios};
use mpseg_service::{AppState, ServiceConfig};
use serde::de::DeserializeOwned;
use tracing_subscriber::EnvFilter;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mpseg", version, about = "Microplastic segmentation pipeline: toy data, inpainting GAN, segmentation, reader study, HTTP service")]
struct Cli {
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; see `mpseg default-config`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a procedural corpus of images with exact masks.
    ToyCorpus(ToyArgs),
    /// Assign train/val/test splits to a manifest.
    Split(SplitArgs),
    /// Train the mask-guided inpainting GAN.
    TrainGan(TrainGanArgs),
    /// Synthesize microplastic into clean images with a trained generator.
    Generate(GenerateArgs),
    /// Train one segmentation model.
    TrainSeg(TrainSegArgs),
    /// Baseline versus augmented training over several seeds.
    Experiment(ExperimentArgs),
    /// Score a segmentation checkpoint on a labeled manifest.
    Eval(EvalArgs),
    /// Run a reader study with a simulated reader.
    StudySim(StudySimArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Print the default run configuration.
    DefaultConfig,
}

fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn ratios(s: &str) -> Result<SplitRatios, String> {
    let parts: Vec<f64> = s
        .split(['/', ','])
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [train, val, test] => Ok(SplitRatios { train, val, test }),
        _ => Err(format!("expected three ratios like 0.8/0.1/0.1, got {s:?}")),
    }
}

fn seeds(s: &str) -> Result<Vec<u64>, String> {
    s.split(',').map(|p| p.trim().parse::<u64>().map_err(|e| format!("{p:?}: {e}"))).collect()
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long)]
    n_images: Option<usize>,
    #[arg(long)]
    image_size: Option<u32>,
    /// gradient, debris or texture_noise.
    #[arg(long, value_parser = serde_value::<Background>)]
    background: Option<Background>,
    /// cohort1, cohort2, cohort3 or synthetic.
    #[arg(long, value_parser = serde_value::<Cohort>)]
    cohort: Option<Cohort>,
    #[arg(long)]
    min_shapes: Option<u32>,
    #[arg(long)]
    max_shapes: Option<u32>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// train/val/test fractions.
    #[arg(long, value_parser = ratios)]
    ratios: Option<SplitRatios>,
}

#[derive(Debug, Args)]
struct TrainGanArgs {
    /// Labeled manifest; its train split is used when present.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Inpainting GAN checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest of plastic-free images.
    #[arg(long)]
    clean: PathBuf,
    /// Labeled manifest whose masks guide placement (train split when present).
    #[arg(long)]
    guides: PathBuf,
    #[arg(long)]
    per_image_count: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainSegArgs {
    /// Split Cohort 1 manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Synthetic corpus added to the training split.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Split Cohort 1 manifest.
    #[arg(long)]
    cohort1: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    cohort3: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_parser = seeds)]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Only entries in this split (train, val, test, unsplit). Default: all.
    #[arg(long, value_parser = serde_value::<Split>)]
    split: Option<Split>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct StudySimArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    n_per_class: Option<usize>,
    /// Fraction of trials the simulated reader gets right.
    #[arg(long)]
    accuracy: Option<f64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Segmentation checkpoint. Without one the service starts and reports 503.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 20)]
    max_body_mb: usize,
    /// Persist reader-study sessions here.
    #[arg(long)]
    session_dir: Option<PathBuf>,
    /// Concurrent inference workers.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_seed(cli.seed);
    let out = cli.out;
    let run_dir = match cli.command {
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes"));
            return Ok(());
        }
        Command::Serve(a) => return serve(a),
        Command::ToyCorpus(a) => {
            let t = &mut cfg.toy_corpus;
            t.n_images = a.n_images.unwrap_or(t.n_images);
            t.image_size = a.image_size.unwrap_or(t.image_size);
            t.background = a.background.unwrap_or(t.background);
            t.cohort = a.cohort.unwrap_or(t.cohort);
            t.shapes_per_image = (a.min_shapes.unwrap_or(t.shapes_per_image.0), a.max_shapes.unwrap_or(t.shapes_per_image.1));
            commands::toy_corpus(&out, &cfg)?
        }
        Command::Split(a) => {
            cfg.split = a.ratios.unwrap_or(cfg.split);
            commands::split(&out, &cfg, &a.manifest)?
        }
        Command::TrainGan(a) => {
            cfg.gan.epochs = a.epochs.unwrap_or(cfg.gan.epochs);
            commands::train_gan_cmd(&out, &cfg, &a.manifest)?
        }
        Command::Generate(a) => {
            cfg.synth.per_image_count = a.per_image_count.unwrap_or(cfg.synth.per_image_count);
            commands::generate(&out, &cfg, &a.checkpoint, &a.clean, &a.guides)?
        }
        Command::TrainSeg(a) => {
            cfg.seg.epochs = a.epochs.unwrap_or(cfg.seg.epochs);
            commands::train_seg(&out, &cfg, &a.manifest, a.synthetic.as_deref())?
        }
        Command::Experiment(a) => {
            cfg.seg.epochs = a.epochs.unwrap_or(cfg.seg.epochs);
            cfg.experiment.seeds = a.seeds.unwrap_or(cfg.experiment.seeds);
            commands::experiment(&out, &cfg, &a.cohort1, &a.synthetic, &a.cohort3)?
        }
        Command::Eval(a) => commands::eval(&out, &a.checkpoint, &a.manifest, a.split, a.threshold)?,
        Command::StudySim(a) => {
            cfg.study.n_per_class = a.n_per_class.unwrap_or(cfg.study.n_per_class);
            cfg.study.accuracy = a.accuracy.unwrap_or(cfg.study.accuracy);
            commands::study_sim(&out, &cfg, &a.real, &a.generated)?
        }
    };
    println!("run directory: {}", run_dir.display());
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let cfg = ServiceConfig {
        checkpoint: a.checkpoint,
        threshold: a.threshold,
        max_body_mb: a.max_body_mb,
        session_dir: a.session_dir,
        workers: a.workers,
    };
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Config(format!("bad --host/--port: {e}")))?;
    let state = AppState::from_config(&cfg)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::io(addr.to_string(), e))?;
        let bound = listener.local_addr().map_err(|e| CliError::io(addr.to_string(), e))?;
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
        mpseg_service::serve(state, listener).await.map_err(|e| CliError::io(bound.to_string(), e))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
