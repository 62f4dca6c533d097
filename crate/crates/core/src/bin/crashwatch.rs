use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crashwatch::replay::{
    load_inputs, load_trace, render_transcripts, run, synthesize_trace, PipelineConfig, ReplayError, ReportDocument,
    Scenario,
};

#[derive(Parser)]
#[command(
    name = "crashwatch",
    version,
    about = "Replay accident-detection traces against a simulated GSM modem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace and report detection, location and notification outcomes.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        fault_script: Option<PathBuf>,
        /// Write the TOML report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write every SMS dialogue transcript here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Generate a synthetic trace.
    Synth {
        /// clean_crash, no_gps_crash, tilt_spikes, proximity_only or quiet
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge shard reports into one.
    Metrics {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<(), ReplayError> {
    std::fs::write(path, text).map_err(|err| ReplayError::Io {
        path: path.to_owned(),
        err,
    })
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), ReplayError> {
    match command {
        Command::Replay {
            trace,
            registry,
            config,
            fault_script,
            report,
            transcript,
        } => {
            let cfg = match config {
                Some(path) => PipelineConfig::load(path)?,
                None => PipelineConfig::default(),
            };
            let (registry, faults) = load_inputs(&cfg, registry.as_deref(), fault_script.as_deref())?;
            let trace = load_trace(&trace)?;
            let out = run(&trace, &registry, &cfg, faults)?;
            print!("{}", out.log_text());
            let doc = out.report().to_toml();
            match report {
                Some(path) => write(&path, &doc)?,
                None => print!("{doc}"),
            }
            if let Some(path) = transcript {
                write(&path, &render_transcripts(&out))?;
            }
        }
        Command::Synth { scenario, seed, out } => {
            write(&out, &synthesize_trace(scenario, seed).to_text())?;
        }
        Command::Metrics { reports } => {
            let docs = reports
                .iter()
                .map(ReportDocument::load)
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", ReportDocument::merge_all(&docs).to_toml());
        }
    }
    Ok(())
}
