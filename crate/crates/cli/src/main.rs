use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flamesentinel_core::models::Variant;

mod commands;
mod output;

/// Flame-video instability detection with selective convolutional autoencoders.
#[derive(Parser)]
#[command(name = "flamesentinel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic flame video, pressure trace and ground truth.
    Synth {
        /// A test protocol (transition_with_precursors, sudden_transition,
        /// no_transition) or a corpus scenario (stable, unstable,
        /// temporal_only_stable, temporal_only_unstable).
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        fps: Option<f64>,
        /// Seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train a selective autoencoder on stable and unstable video corpora.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory searched recursively for .fvid files.
        #[arg(long)]
        stable: PathBuf,
        #[arg(long)]
        unstable: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train for the full 200-epoch schedule.
        #[arg(long, conflicts_with = "epochs")]
        parity: bool,
    },
    /// Compute instability traces and events for a video.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pressure-conditioned edge ensembles around detected events.
    Validate {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        pressure: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Density and overlap report for a detect run.
    Report {
        /// Output directory of a detect run.
        #[arg(long)]
        run: PathBuf,
        /// Ground-truth JSON; without it the detected transition splits the trace.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FLAMESENTINEL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow::anyhow!("FLAMESENTINEL_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth { protocol, out, seed, fps, duration } => commands::synth(&protocol, &out, seed, fps, duration),
        Command::Train { config, stable, unstable, out, variant, epochs, parity } => {
            let epochs = if parity { Some(flamesentinel_core::training::TrainingConfig::PARITY_EPOCHS) } else { epochs };
            commands::train(config.as_deref(), &stable, &unstable, &out, variant, epochs)
        }
        Command::Detect { model, video, out, config } => commands::detect(&model, &video, &out, config.as_deref()),
        Command::Validate { video, pressure, events, out, config } => {
            commands::validate(&video, &pressure, &events, &out, config.as_deref())
        }
        Command::Report { run, truth, config } => commands::report(&run, truth.as_deref(), config.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
