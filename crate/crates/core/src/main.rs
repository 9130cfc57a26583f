use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use omnireg_core::cli::{self, CliError, QcInput};
use omnireg_core::Pipeline;

#[derive(Parser)]
#[command(name = "omnireg", version, about = "Sequential vs. concatenated nuisance regression with QC-FC motion metrics")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic cohort.
    Phantom {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one correction pipeline to every subject of a cohort.
    Correct {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_pipeline)]
        pipeline: Pipeline,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute QC-FC and QC-FC distance dependence.
    Qc {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, conflicts_with = "raw", required_unless_present = "raw")]
        corrected: Option<PathBuf>,
        /// Use the uncorrected timeseries (the baseline).
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = cli::DEFAULT_BINS)]
        bins: usize,
    },
    /// Compare QC reports side by side.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the combined CSV here instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    s.parse().map_err(|e: omnireg_core::Error| e.to_string())
}

fn run(args: Args) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    match args.command {
        Command::Phantom { config, out: dir } => cli::cmd_phantom(&config, &dir, &mut out),
        Command::Correct {
            manifest,
            pipeline,
            out: dir,
        } => cli::cmd_correct(&manifest, pipeline, &dir, &mut out),
        Command::Qc {
            manifest,
            corrected,
            raw: _,
            report,
            bins,
        } => {
            let input = corrected.map_or(QcInput::Raw, QcInput::Corrected);
            cli::cmd_qc(&manifest, &input, &report, bins, &mut out)
        }
        Command::Report { reports, csv } => cli::cmd_report(&reports, csv.as_deref(), &mut out),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
