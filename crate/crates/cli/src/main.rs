//! `actdis`: activity detection from smart-meter load, one subcommand per
//! pipeline stage.

mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use activity_disagg::features::{FeatureConfig, TimeFeatureSet};
use activity_disagg::ingest::{DEFAULT_MAX_GAP_MINUTES, DEFAULT_THRESHOLD_KW};
use activity_disagg::pipeline::{self, DataSource, ModelOptions, TrainOptions, WindowOptions, DEFAULT_ACTIVITY};
use activity_disagg::svm::Hyperparams;
use activity_disagg::synth::SynthConfig;
use activity_disagg::{Error, Method};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::manifest::ManifestBuilder;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "actdis", version, about = "Detect household activities from aggregate smart-meter load")]
struct Cli {
    /// Seed for every random choice (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// JSON config: synthetic household for `simulate`, hyperparameters for `train`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic household (load.csv, weather.csv, labels.csv).
    Simulate,
    /// Train detection models and report test-split metrics.
    Train(TrainArgs),
    /// Apply a saved model; writes detections.csv and timeline.csv.
    Detect(ApplyArgs),
    /// Score a saved model on a labeled household; writes metrics.csv and timeline.csv.
    Evaluate(ApplyArgs),
    /// Build hourly profiles and the transition matrix from label files.
    Model(ModelArgs),
    /// Convert an output file into a tidy CSV for plotting.
    PlotData(PlotArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Minute-resolution load CSV (`timestamp,<appliance>...[,aggregate]`).
    #[arg(long)]
    load: PathBuf,
    /// Weather CSV (`timestamp,temperature_c`).
    #[arg(long)]
    weather: Option<PathBuf>,
    /// JSON map from activity to appliance columns.
    #[arg(long)]
    activity_map: Option<PathBuf>,
    /// Activity to detect.
    #[arg(long, default_value = DEFAULT_ACTIVITY)]
    activity: String,
    /// Ground-truth threshold on the window's mean activity load, kW.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_KW)]
    threshold: f64,
    /// Longest gap (minutes) filled by interpolation.
    #[arg(long, default_value_t = DEFAULT_MAX_GAP_MINUTES)]
    max_gap: usize,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        DataSource { load: self.load.clone(), weather: self.weather.clone(), activity_map: self.activity_map.clone() }
    }

    fn window_options(&self) -> WindowOptions {
        WindowOptions { activity: self.activity.clone(), threshold: self.threshold, max_gap: self.max_gap }
    }
}

#[derive(Clone, Debug)]
enum MethodChoice {
    One(Method),
    All,
}

impl std::str::FromStr for MethodChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        s.parse::<Method>().map(Self::One).map_err(|_| format!("unknown method `{s}` (expected m1..m4 or all)"))
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Feature method: m1 (spectrum), m2 (time domain), m3 (both), m4 (both + temperature) or all.
    #[arg(long, default_value = "m4")]
    method: MethodChoice,
    /// Soft-margin penalty C.
    #[arg(long)]
    c: Option<f64>,
    /// Solver tolerance on the KKT violation.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Weight the penalty per class by inverse class frequency.
    #[arg(long)]
    class_weighting: bool,
    /// Remove the window mean before the spectrum.
    #[arg(long)]
    detrend: bool,
    /// Use the three-column time-domain set (variance, mean, max).
    #[arg(long)]
    minimal_time_features: bool,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    /// Saved model.json.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Label files (`timestamp,<activity>...`), e.g. labels.csv or detections.csv.
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    /// Comma-separated state order; defaults to the order in the files.
    #[arg(long, value_delimiter = ',')]
    states: Option<Vec<String>>,
    /// Additive smoothing for transition rows.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// metrics.csv, timeline.csv, profile.csv or transitions.json.
    input: PathBuf,
}

/// Errors that should exit with the usage status.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn existing_config(cli: &Cli) -> Result<Option<&Path>> {
    match &cli.config {
        Some(p) if !p.is_file() => Err(usage(format!("config file {} does not exist", p.display()))),
        other => Ok(other.as_deref()),
    }
}

fn simulate(cli: &Cli) -> Result<()> {
    let path = existing_config(cli)?.ok_or_else(|| usage("simulate requires --config <FILE>"))?;
    let mut config = SynthConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let m = ManifestBuilder::start("simulate", Some(config.seed), Some(path));
    let (out, files) = pipeline::simulate(&config, &cli.out)?;
    if out.clip_events > 0 {
        eprintln!("note: {} aggregate minutes were clipped at zero", out.clip_events);
    }
    m.finish(&cli.out, &[], &files)?;
    info!("wrote {} files to {}", files.len(), cli.out.display());
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let config = existing_config(cli)?;
    let mut hp = match config {
        Some(p) => serde_json::from_str::<Hyperparams>(&std::fs::read_to_string(p)?)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Hyperparams::default(),
    };
    hp.seed = cli.seed.unwrap_or(if config.is_some() { hp.seed } else { DEFAULT_SEED });
    if let Some(c) = args.c {
        hp.c = c;
    }
    if let Some(t) = args.tol {
        hp.tol = t;
    }
    if let Some(n) = args.max_iter {
        hp.max_iter = n;
    }
    hp.class_weighted |= args.class_weighting;
    let methods = match &args.method {
        MethodChoice::One(m) => vec![*m],
        MethodChoice::All => Method::ALL.to_vec(),
    };
    let opts = TrainOptions {
        windows: args.data.window_options(),
        methods,
        hyperparams: hp,
        features: FeatureConfig {
            detrend: args.detrend,
            time_set: if args.minimal_time_features { TimeFeatureSet::Minimal } else { TimeFeatureSet::Full },
        },
        ..TrainOptions::default()
    };
    let src = args.data.source();
    let m = ManifestBuilder::start("train", Some(hp.seed), config);
    let (report, files) = pipeline::train(&src, &opts, &cli.out)?;
    for r in &report.results {
        let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.2}%"));
        eprintln!(
            "{}: accuracy {:.2}%  precision {}  recall {}",
            r.method,
            r.metrics.accuracy,
            pct(r.metrics.precision),
            pct(r.metrics.recall)
        );
    }
    for s in &report.skipped {
        eprintln!("{s}: skipped (no weather data)");
    }
    m.finish(&cli.out, &src.input_files(), &files)?;
    Ok(())
}

fn apply(cli: &Cli, args: &ApplyArgs, evaluate: bool) -> Result<()> {
    let src = args.data.source();
    let opts = args.data.window_options();
    let name = if evaluate { "evaluate" } else { "detect" };
    let m = ManifestBuilder::start(name, cli.seed, None);
    let files = if evaluate {
        let (counts, report, files) = pipeline::evaluate(&args.model, &src, &opts, &cli.out)?;
        eprintln!(
            "TP={} TN={} FP={} FN={}  accuracy {:.2}%",
            counts.tp, counts.tn, counts.fp, counts.fn_, report.accuracy
        );
        files
    } else {
        let (det, files) = pipeline::detect(&args.model, &src, &opts, &cli.out)?;
        eprintln!("{} of {} windows detected active", det.predicted.active_count(), det.predicted.len());
        files
    };
    let mut inputs = src.input_files();
    inputs.push(&args.model);
    m.finish(&cli.out, &inputs, &files)?;
    Ok(())
}

fn model(cli: &Cli, args: &ModelArgs) -> Result<()> {
    let opts = ModelOptions { states: args.states.clone(), smoothing: args.smoothing };
    let m = ManifestBuilder::start("model", cli.seed, None);
    let (_, tm, files) = pipeline::model(&args.labels, &opts, &cli.out)?;
    eprintln!("{} states, {} transitions", tm.len(), tm.counts.iter().flatten().sum::<u64>());
    let inputs: Vec<&Path> = args.labels.iter().map(PathBuf::as_path).collect();
    m.finish(&cli.out, &inputs, &files)?;
    Ok(())
}

fn plot_data(cli: &Cli, args: &PlotArgs) -> Result<()> {
    let m = ManifestBuilder::start("plot-data", cli.seed, None);
    let (_, path) = match pipeline::plot_data(&args.input, &cli.out) {
        Err(Error::UnsupportedInput(p)) => {
            return Err(usage(format!("{p}: not a metrics, timeline, profile or transitions file")))
        }
        other => other?,
    };
    m.finish(&cli.out, &[&args.input], &[path])?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Train(a) => train(cli, a),
        Command::Detect(a) => apply(cli, a, false),
        Command::Evaluate(a) => apply(cli, a, true),
        Command::Model(a) => model(cli, a),
        Command::PlotData(a) => plot_data(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\nRun `actdis --help` for usage.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
