use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{self, CliError, SegmentArgs, TrainArgs};
use crate::config::PipelineConfig;
use crate::dataset::Split;

/// Environment variable capping the worker pool width.
pub const THREADS_VAR: &str = "GLANDSEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "glandseg", version, about = "Gland segmentation in H&E colon histology")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the border-nucleus forest and thick/thin threshold.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Overrides forest.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also dump the training feature matrix as CSV.
        #[arg(long)]
        features_csv: Option<PathBuf>,
    },
    /// Segment every image of the dataset (or one split).
    Segment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
        /// Also write nucleus masks and a tinted overlay per image.
        #[arg(long)]
        debug_overlays: bool,
    },
    /// Score `<id>_seg.png` predictions against annotated images.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON report path; the text table goes next to it with a .txt
        /// extension.
        #[arg(long)]
        report: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Input(format!("{THREADS_VAR} must be a positive integer, got `{value}`")))?;
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Exit status and the summary to print on stdout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completed {
    /// 0 on success, 1 when some images failed.
    pub code: u8,
    pub summary: String,
}

/// Run a command. Errors map to exit status 1 (pipeline) or 2
/// (configuration and input) through [`CliError::exit_code`].
pub fn execute(cli: &Cli) -> Result<Completed, CliError> {
    init_threads()?;
    match &cli.command {
        Command::Train { data, config, model, seed, features_csv } => {
            let cfg = load_config(config.as_ref())?;
            let s = commands::train(&TrainArgs {
                data,
                config: &cfg,
                model,
                seed: *seed,
                features_csv: features_csv.as_deref(),
            })?;
            let summary = format!(
                "trained on {} images: {} nuclei ({} border, {} other), threshold {:.4}, model sha256 {}\n",
                s.images,
                s.samples,
                s.positives,
                s.samples - s.positives,
                s.threshold,
                s.model_sha256
            );
            Ok(Completed { code: 0, summary })
        }
        Command::Segment { data, model, out, config, split, debug_overlays } => {
            let cfg = load_config(config.as_ref())?;
            let m = commands::segment_dataset(&SegmentArgs {
                data,
                model,
                out,
                config: &cfg,
                split: *split,
                debug_overlays: *debug_overlays,
            })?;
            let summary = format!("segmented {} images, {} failed\n", m.images.len(), m.failures.len());
            Ok(Completed { code: u8::from(!m.failures.is_empty()), summary })
        }
        Command::Evaluate { pred, gt, report } => {
            let e = commands::evaluate(pred, gt, report)?;
            Ok(Completed { code: u8::from(!e.failures.is_empty()), summary: e.report.to_table() })
        }
    }
}

pub fn run(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(done) => {
            print!("{}", done.summary);
            ExitCode::from(done.code)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
