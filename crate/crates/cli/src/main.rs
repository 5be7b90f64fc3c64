//! `cellfade`: fit capacity-fade curves, build bands, predict end of life,
//! cross-validate and simulate fleets from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cellfade",
    version,
    about = "Capacity-fade modelling for lithium-ion cells"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model to a single battery or to the pooled measurements.
    Fit(FitArgs),
    /// Pointwise confidence and prediction bands around a fit.
    Band(BandArgs),
    /// Predicted cycles until capacity falls to q times its initial value.
    PredictEol(EolArgs),
    /// Cross-validated end-of-life prediction error.
    Crossval(CrossvalArgs),
    /// Fit all five model families to the same data and compare SSE.
    CompareModels(CompareArgs),
    /// Write a synthetic fleet as CSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Common {
    /// Measurements with header `battery_id,cycle,capacity`.
    input: PathBuf,
    /// Raw cycles per kilocycle.
    #[arg(long = "cycle-scale", default_value_t = 1000.0)]
    cycle_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct Target {
    /// sigmoid, sigmoid-raw, double-exp, poly2 or mixture.
    #[arg(long, default_value = "sigmoid")]
    model: String,
    /// Fit this battery only; the pooled measurements otherwise.
    #[arg(long)]
    battery: Option<String>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    target: Target,
}

#[derive(Debug, Args)]
struct BandArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    target: Target,
    /// Band kinds to emit; all four when absent.
    #[arg(long, value_delimiter = ',')]
    kind: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 1000)]
    b: usize,
    /// Prediction-error draws per replicate.
    #[arg(long = "M", default_value_t = 1)]
    m: usize,
    /// Grid points spanning [0, 1.2 max x].
    #[arg(long, default_value_t = 200)]
    points: usize,
}

#[derive(Debug, Args)]
struct EolArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    target: Target,
    #[arg(long)]
    q: f64,
    /// Initial capacity; the battery's first measurement or f(0) of the fit
    /// when absent.
    #[arg(long = "y-init")]
    y_init: Option<f64>,
    /// Bootstrap replicates for an interval on the end of life; no interval
    /// when absent.
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "sigmoid")]
    model: String,
    /// End-of-life fractions, one table row each.
    #[arg(long, value_delimiter = ',', required = true)]
    q: Vec<f64>,
    /// Training shares of the batteries.
    #[arg(long, value_delimiter = ',', default_value = "0.75")]
    fraction: Vec<f64>,
    /// Cut training traces at this fraction of their initial capacity.
    #[arg(long = "censor-at")]
    censor_at: Option<f64>,
    /// Training traces left uncensored, drawn among those observed below the
    /// censoring level.
    #[arg(long = "keep-complete", default_value_t = 0, requires = "censor_at")]
    keep_complete: usize,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    battery: Option<String>,
    /// Keep only the first N measurements of each trace.
    #[arg(long = "max-points")]
    max_points: Option<usize>,
    /// Keep each trace up to its first capacity below this fraction of its
    /// initial value.
    #[arg(long = "censor-at")]
    censor_at: Option<f64>,
    /// Points on each emitted fitted curve.
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Also write the fitted curves as `family,x,y` rows to this file.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "sigmoid")]
    model: String,
    /// Mean parameters, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1.82,0.20,1.06,1.72,0.21"
    )]
    beta: Vec<f64>,
    /// Relative parameter jitter, one shared value or one per parameter.
    #[arg(long, value_delimiter = ',', default_value = "0.03")]
    jitter: Vec<f64>,
    #[arg(long, default_value_t = 0.005)]
    sigma: f64,
    #[arg(long = "batteries", default_value_t = 48)]
    batteries: usize,
    /// Measurements per battery, evenly spaced on [0, max-x].
    #[arg(long, default_value_t = 31)]
    points: usize,
    /// Last measurement, in kilocycles.
    #[arg(long = "max-x", default_value_t = 3.0)]
    max_x: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CELLFADE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("CELLFADE_THREADS must be a positive integer, got '{raw}'"))?;
    if threads == 0 {
        anyhow::bail!("CELLFADE_THREADS must be a positive integer, got '{raw}'");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Band(a) => commands::band(a),
        Command::PredictEol(a) => commands::predict_eol(a),
        Command::Crossval(a) => commands::crossval(a),
        Command::CompareModels(a) => commands::compare_models(a),
        Command::Simulate(a) => commands::simulate(a),
    });
    match result {
        Ok(status) => status.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            commands::exit_code_for(&e)
        }
    }
}
