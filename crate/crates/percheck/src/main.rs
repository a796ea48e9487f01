use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use percheck::commands::{self, BuildCmArgs, Global, DEFAULT_CLASSES};
use percheck_core::cm::CmMode;
use percheck_core::SafetySpec;

/// Perception-aware safety analysis of a car approaching a crosswalk.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Random seed for simulation; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a distance-banded confusion matrix from detection CSVs.
    BuildCm {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// `class` (per object) or `prop` (per frame and band).
        #[arg(long, value_parser = parse_mode)]
        mode: CmMode,
        /// Comma-separated band edges in metres; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        bands: Option<Vec<f64>>,
        /// Comma-separated class names in label order.
        #[arg(long, default_value = DEFAULT_CLASSES)]
        classes: String,
        /// IoU threshold for matching; defaults to the config's or 0.5.
        #[arg(long)]
        iou: Option<f64>,
        /// Output fixture path; defaults to `<out>/cm_<mode>.cm`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Satisfaction probability of every requirement for one scenario.
    Eval,
    /// Probabilities over the configured grid of variants, environments and speeds.
    Sweep {
        /// Also estimate every grid point by simulation with this many trials.
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Monte Carlo estimate for one scenario next to the exact value.
    Simulate {
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, value_parser = parse_spec)]
        spec: Option<SafetySpec>,
    },
    /// Write the chain as explicit-state transition, label and state files.
    Export,
}

fn parse_mode(s: &str) -> Result<CmMode, String> {
    s.parse().map_err(|e: percheck_core::Error| e.to_string())
}

fn parse_spec(s: &str) -> Result<SafetySpec, String> {
    s.parse().map_err(|e: percheck_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = Global {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        verbose: cli.verbose,
    };
    let result = match cli.command {
        Command::BuildCm {
            gt,
            pred,
            mode,
            bands,
            classes,
            iou,
            output,
        } => commands::build_cm(
            &g,
            &BuildCmArgs {
                gt,
                pred,
                mode,
                bands,
                classes,
                iou,
                output,
            },
        ),
        Command::Eval => commands::eval(&g),
        Command::Sweep { trials } => commands::sweep(&g, trials),
        Command::Simulate { trials, spec } => commands::simulate(&g, trials, spec),
        Command::Export => commands::export(&g),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
