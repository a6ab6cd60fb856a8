use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stlb_cli::{cmd_generate, cmd_report, cmd_run, cmd_saliency, RunOptions, SaliencyArgs};
use stlb_cli::spec::ExperimentSpec;

#[derive(Parser)]
#[command(
    name = "stlb",
    about = "Staged-transfer network laboratory: generate data, run process grids, export saliency maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render every domain the spec defines into its output directory.
    Generate {
        /// Experiment spec (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Train the full (process x seed x fraction) grid and write
    /// results.csv, slopes.csv, and per-cell checkpoints.
    Run {
        /// Experiment spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Skip cells already recorded in the progress file.
        #[arg(long)]
        resume: bool,
        /// Worker threads; seeds are distributed across workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Backproject a layer's feature map for one image and write
    /// magnitude PGMs plus signed CSVs.
    Saliency {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image (PGM), sized to the network input.
        #[arg(long)]
        image: PathBuf,
        /// Layer name, e.g. conv1 or fc2.
        #[arg(long)]
        layer: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Visualize one channel of the feature map.
        #[arg(long, conflicts_with = "top")]
        channel: Option<usize>,
        /// Visualize the m highest-energy channels (default 1).
        #[arg(long)]
        top: Option<usize>,
    },
    /// Summarize a finished run: metrics table plus robustness ranking.
    Report {
        /// Directory holding results.csv (and slopes.csv).
        #[arg(long)]
        results: PathBuf,
    },
}

fn run(cli: Cli) -> stlb_core::Result<ExitCode> {
    match cli.command {
        Command::Generate { spec } => {
            let spec = ExperimentSpec::from_file(&spec)?;
            for path in cmd_generate(&spec)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { spec, resume, jobs } => {
            let spec = ExperimentSpec::from_file(&spec)?;
            let summary = cmd_run(&spec, &RunOptions { resume, jobs })?;
            println!(
                "config {}: {} cells completed, {} failed",
                summary.config, summary.completed, summary.failed
            );
            println!("{}", summary.results_csv.display());
            println!("{}", summary.slopes_csv.display());
            if summary.failed > 0 {
                eprintln!("{} grid cells failed; see progress.jsonl", summary.failed);
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Saliency {
            ckpt,
            image,
            layer,
            out,
            channel,
            top,
        } => {
            let written = cmd_saliency(&SaliencyArgs {
                checkpoint: ckpt,
                image,
                layer,
                out_dir: out,
                channel,
                top,
            })?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { results } => {
            print!("{}", cmd_report(&results)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
