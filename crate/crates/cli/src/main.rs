mod cmd;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::UsageError;

/// Gridded weather and climate forecasting benchmark.
#[derive(Debug, Parser)]
#[command(name = "clbench", version)]
struct Cli {
    /// key=value file of flag defaults; `#` starts a comment. Flags given on
    /// the command line override the file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads; defaults to CLBENCH_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
enum Command {
    /// Generate a seeded synthetic series and its manifest.
    GenSynthetic(cmd::data::GenArgs),
    /// Convert long-format CSV or raw little-endian f32 into a container.
    Ingest(cmd::data::IngestArgs),
    /// Print dimensions and per-variable statistics as JSON.
    Stats(cmd::data::StatsArgs),
    /// Split a series into train/val/test by calendar year.
    Split(cmd::data::SplitArgs),
    /// Resample onto a global grid of another resolution.
    Regrid(cmd::data::RegridArgs),
    /// Cut a lat/lon box out of a series.
    Crop(cmd::data::CropArgs),
    /// Per-pixel percentile thresholds of rolling localized means.
    ExtremeThresholds(cmd::extreme::ThresholdArgs),
    /// Boolean extreme-event masks for a series.
    ExtremeMasks(cmd::extreme::MaskArgs),
    /// Fit or run a reference forecaster.
    Baseline(cmd::baseline::BaselineArgs),
    /// Score predictions against truth.
    Evaluate(cmd::evaluate::EvaluateArgs),
    /// Roll a one-step model forward to a longer lead.
    Rollout(cmd::evaluate::RolloutArgs),
    /// Render a report as JSON, CSV or maps.
    Report(cmd::evaluate::ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic(_) => "gen-synthetic",
            Command::Ingest(_) => "ingest",
            Command::Stats(_) => "stats",
            Command::Split(_) => "split",
            Command::Regrid(_) => "regrid",
            Command::Crop(_) => "crop",
            Command::ExtremeThresholds(_) => "extreme-thresholds",
            Command::ExtremeMasks(_) => "extreme-masks",
            Command::Baseline(_) => "baseline",
            Command::Evaluate(_) => "evaluate",
            Command::Rollout(_) => "rollout",
            Command::Report(_) => "report",
        }
    }
}

/// Settings shared by every subcommand once resolved.
pub struct Globals {
    pub seed: u64,
}

fn main() -> ExitCode {
    let argv = match config::merge_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = match cli.threads {
        Some(n) => n,
        None => match std::env::var("CLBENCH_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("CLBENCH_THREADS={v:?} is not a thread count")))?,
            Err(_) => 0,
        },
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    config::echo(
        cli.command.name(),
        &[("seed", cli.seed.to_string()), ("threads", rayon::current_num_threads().to_string())],
        &cli.command,
    )?;
    let g = Globals { seed: cli.seed };
    match cli.command {
        Command::GenSynthetic(a) => cmd::data::gen_synthetic(&a, &g),
        Command::Ingest(a) => cmd::data::ingest(&a),
        Command::Stats(a) => cmd::data::stats(&a),
        Command::Split(a) => cmd::data::split(&a),
        Command::Regrid(a) => cmd::data::regrid(&a),
        Command::Crop(a) => cmd::data::crop(&a),
        Command::ExtremeThresholds(a) => cmd::extreme::thresholds(&a),
        Command::ExtremeMasks(a) => cmd::extreme::masks(&a),
        Command::Baseline(a) => cmd::baseline::run(&a),
        Command::Evaluate(a) => cmd::evaluate::evaluate(&a),
        Command::Rollout(a) => cmd::evaluate::rollout(&a),
        Command::Report(a) => cmd::evaluate::report(&a),
    }
}
