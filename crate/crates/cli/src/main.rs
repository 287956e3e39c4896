use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spotmatch::bench::{self, Difficulty, SynthSpec};
use spotmatch::config::{RunConfig, DEFAULT_THRESHOLD};
use spotmatch::pipeline::{self, ErrorKind, PipelineError, Stage};

/// Groups camera-trap videos of patterned animals into individuals.
#[derive(Debug, Parser)]
#[command(name = "spotmatch", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Every flag can also be set through a `SPOTMATCH_` environment variable.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true, env = "SPOTMATCH_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "SPOTMATCH_INPUT_MANIFEST")]
    input_manifest: Option<PathBuf>,
    /// Detector output to import instead of motion detection.
    #[arg(long, global = true, env = "SPOTMATCH_DETECTIONS")]
    detections: Option<PathBuf>,
    #[arg(long, global = true, env = "SPOTMATCH_THRESHOLD")]
    threshold: Option<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "SPOTMATCH_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true, env = "SPOTMATCH_SEED")]
    seed: Option<u64>,
    /// Run directory (or dataset directory for `synth`).
    #[arg(long, global = true, env = "SPOTMATCH_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// CSV with columns sequence_id,individual_id.
    #[arg(long, global = true, env = "SPOTMATCH_LABELS")]
    labels: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// All stages, skipping those whose inputs are unchanged.
    Run,
    Ingest,
    Detect,
    Extract,
    Match,
    Cluster,
    Report,
    /// Scores clusters.json against --labels.
    Evaluate,
    /// Writes a synthetic dataset with manifest, labels and detections.
    Synth(SynthArgs),
    /// Re-clusters similarities.csv at several thresholds against --labels.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    individuals: usize,
    #[arg(long, default_value_t = 3)]
    videos_per_individual: usize,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value = "easy")]
    difficulty: Difficulty,
    /// Distinct camera locations; defaults to min(3, individuals).
    #[arg(long)]
    locations: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Ascending, comma separated.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::new(ErrorKind::Config, None, msg)
}

fn resolve_config(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| config_error(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.input_manifest {
        cfg.input_manifest = Some(v.clone());
    }
    if let Some(v) = &c.detections {
        cfg.detect.detections = Some(v.clone());
    }
    if let Some(v) = c.threshold {
        cfg.cluster.threshold = v;
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
        cfg.report.layout_seed = v;
    }
    if let Some(v) = &c.out_dir {
        cfg.out_dir = v.clone();
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn labels_path(c: &Common) -> Result<PathBuf, PipelineError> {
    c.labels.clone().ok_or_else(|| config_error("--labels is required"))
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let cfg = resolve_config(&cli.common)?;
    let stage = match &cli.command {
        Command::Ingest => Some(Stage::Ingest),
        Command::Detect => Some(Stage::Detect),
        Command::Extract => Some(Stage::Extract),
        Command::Match => Some(Stage::Match),
        Command::Cluster => Some(Stage::Cluster),
        Command::Report => Some(Stage::Report),
        _ => None,
    };
    if let Some(stage) = stage {
        pipeline::run_stage(stage, &cfg, &cfg.out_dir)?;
        println!("stage {stage}: ran");
        return Ok(());
    }
    match cli.command {
        Command::Run => {
            let summary = pipeline::run(&cfg)?;
            for (stage, status) in &summary.stages {
                println!("stage {stage}: {}", serde_json::to_value(status).expect("json").as_str().unwrap_or(""));
            }
            println!(
                "{} videos ({} without detections), {} scored pairs, {} matches, {} clusters in {}",
                summary.n_videos,
                summary.n_empty,
                summary.n_records,
                summary.n_matches,
                summary.n_clusters,
                summary.run_dir.display()
            );
        }
        Command::Evaluate => {
            let report = pipeline::evaluate_run(&cfg.out_dir, &labels_path(&cli.common)?)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Synth(a) => {
            let mut spec = SynthSpec::new(cfg.seed, a.individuals, a.videos_per_individual, a.frames, a.difficulty);
            spec.n_locations = a.locations;
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
                PipelineError::new(ErrorKind::Store, None, format!("{}: {e}", cfg.out_dir.display()))
            })?;
            let ds = bench::generate_synthetic_dataset(&spec, &cfg.out_dir)
                .map_err(|e| PipelineError::new(ErrorKind::Store, None, e.to_string()))?;
            println!("manifest {}", ds.manifest.display());
            println!("labels {}", ds.labels_path.display());
            println!("detections {}", ds.detections_path.display());
        }
        Command::Sweep(a) => {
            let thresholds = if a.thresholds.is_empty() {
                [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0].map(|k| k * DEFAULT_THRESHOLD).to_vec()
            } else {
                a.thresholds
            };
            let rows = pipeline::sweep_run(&cfg.out_dir, &labels_path(&cli.common)?, &thresholds)?;
            print!("{}", bench::sweep_to_csv(&rows));
        }
        _ => unreachable!("single stages handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPOTMATCH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(ErrorKind::UnknownStage.exit_code() as u8),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
