//! File-in, file-out commands built from the library stages.
//!
//! Every function here is a pure function of its input files and options:
//! rerunning with the same inputs writes byte-identical outputs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::activity_model::{
    build_state_sequence, estimate_transition_matrix, hourly_distribution, select_series, write_profile_csv,
    ActivitySet, HourlyProfile, TransitionMatrix,
};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_run, metrics, timeline, write_metrics_csv, write_timeline_csv, AblationReport, ConfusionCounts,
    MetricsReport, SplitFractions,
};
use crate::features::{FeatureConfig, FeatureExtractor, Method, WindowRecord};
use crate::ingest::{
    align_and_fill, bundle_activities, detection_windows, fill_gaps, parse_labels_csv, parse_load_csv,
    parse_weather_csv, window_labels, write_labels_csv, ActivityMap, LabelSeries, LoadTable, TemperatureSeries,
    DEFAULT_MAX_GAP_MINUTES, DEFAULT_THRESHOLD_KW,
};
use crate::svm::{Hyperparams, SvmModel};
use crate::synth::{generate, SynthConfig, SynthOutput};

pub const DEFAULT_ACTIVITY: &str = "cooling-heating";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Generates a synthetic household and writes `load.csv`, `weather.csv`
/// and `labels.csv` into `out_dir`.
pub fn simulate(config: &SynthConfig, out_dir: &Path) -> Result<(SynthOutput, Vec<PathBuf>)> {
    let out = generate(config)?;
    let files = out.write_dataset(out_dir)?;
    Ok((out, files))
}

/// Input files of one household.
#[derive(Clone, Debug, Default)]
pub struct DataSource {
    pub load: PathBuf,
    pub weather: Option<PathBuf>,
    /// JSON activity map; the built-in map is used when absent.
    pub activity_map: Option<PathBuf>,
}

impl DataSource {
    pub fn new(load: impl Into<PathBuf>) -> Self {
        Self { load: load.into(), weather: None, activity_map: None }
    }

    pub fn with_weather(mut self, weather: impl Into<PathBuf>) -> Self {
        self.weather = Some(weather.into());
        self
    }

    pub fn input_files(&self) -> Vec<&Path> {
        let mut v = vec![self.load.as_path()];
        v.extend(self.weather.as_deref());
        v.extend(self.activity_map.as_deref());
        v
    }

    fn activity_map(&self) -> Result<ActivityMap> {
        match &self.activity_map {
            Some(p) => ActivityMap::from_path(p),
            None => Ok(ActivityMap::default_map()),
        }
    }
}

/// How raw files become labeled detection windows.
#[derive(Clone, Debug)]
pub struct WindowOptions {
    pub activity: String,
    pub threshold: f64,
    pub max_gap: usize,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self { activity: DEFAULT_ACTIVITY.into(), threshold: DEFAULT_THRESHOLD_KW, max_gap: DEFAULT_MAX_GAP_MINUTES }
    }
}

/// Load and temperature on a common grid plus ground truth when the load
/// carries the activity's sub-meter columns.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub load: LoadTable,
    pub temperature: Option<TemperatureSeries>,
    pub truth: Option<LabelSeries>,
    pub windows: Vec<WindowRecord<f64>>,
}

pub fn prepare(src: &DataSource, opts: &WindowOptions) -> Result<Prepared> {
    let raw = parse_load_csv(&src.load)?;
    let (load, temperature) = match &src.weather {
        Some(w) => {
            let (l, t) = align_and_fill(&raw, &parse_weather_csv(w)?, opts.max_gap)?;
            (l, Some(t))
        }
        None => (fill_gaps(&raw, opts.max_gap), None),
    };

    let map = src.activity_map()?;
    let appliances = map.appliances(&opts.activity).ok_or_else(|| Error::UnknownColumn(opts.activity.clone()))?;
    let truth = if appliances.iter().any(|a| load.columns().contains(a)) {
        let single = ActivityMap::new([(opts.activity.clone(), appliances.to_vec())])?;
        let bundled = bundle_activities(&load, &single)?;
        Some(window_labels(&bundled, &opts.activity, opts.threshold)?)
    } else {
        None
    };
    let windows = detection_windows(&load, temperature.as_ref(), truth.as_ref())?;
    Ok(Prepared { load, temperature, truth, windows })
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub windows: WindowOptions,
    pub methods: Vec<Method>,
    pub hyperparams: Hyperparams,
    pub features: FeatureConfig,
    pub fractions: SplitFractions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            windows: WindowOptions::default(),
            methods: vec![Method::M4],
            hyperparams: Hyperparams::default(),
            features: FeatureConfig::default(),
            fractions: SplitFractions::default(),
        }
    }
}

/// Model file name for `method` when `n_methods` are trained together.
pub fn model_file_name(method: Method, n_methods: usize) -> String {
    if n_methods == 1 {
        "model.json".into()
    } else {
        format!("model_{}.json", method.to_string().to_lowercase())
    }
}

/// Trains one model per requested method on a shared chronological split
/// and writes the models plus `metrics.csv` (test-split scores).
pub fn train(src: &DataSource, opts: &TrainOptions, out_dir: &Path) -> Result<(AblationReport<f64>, Vec<PathBuf>)> {
    let prepared = prepare(src, &opts.windows)?;
    if prepared.truth.is_none() {
        return Err(Error::NoGroundTruth(opts.windows.activity.clone()));
    }
    if opts.methods.len() == 1 && opts.methods[0].uses_temperature() && prepared.temperature.is_none() {
        return Err(Error::MissingTemperature);
    }
    let report = ablation_run(&prepared.windows, &opts.methods, opts.features, &opts.hyperparams, opts.fractions)?;

    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for r in &report.results {
        if !r.model.meta.converged {
            warn!("{}: solver stopped at the iteration cap", r.method);
        }
        let path = out_dir.join(model_file_name(r.method, opts.methods.len()));
        r.model.save(&path)?;
        files.push(path);
    }
    let rows: Vec<(Method, MetricsReport<f64>)> = report.results.iter().map(|r| (r.method, r.metrics.clone())).collect();
    let path = out_dir.join("metrics.csv");
    write_metrics_csv(&rows, create(&path)?)?;
    files.push(path);
    info!("trained {} model(s) on {} windows", report.results.len(), prepared.windows.len());
    Ok((report, files))
}

/// Predictions of a saved model on a household.
#[derive(Clone, Debug)]
pub struct Detection {
    pub prepared: Prepared,
    pub predicted: LabelSeries,
}

fn run_model(model: &SvmModel<f64>, src: &DataSource, opts: &WindowOptions) -> Result<Detection> {
    let method = model.meta.method.ok_or_else(|| Error::MalformedModelFile("train_meta.method is missing".into()))?;
    let mut src = src.clone();
    if !method.uses_temperature() {
        src.weather = None;
    }
    let prepared = prepare(&src, opts)?;
    let extractor = FeatureExtractor::new(model.meta.features);
    let expected = extractor.columns(method);
    if expected.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: expected.len() });
    }
    let matrix = extractor.assemble(&prepared.windows, method)?;
    let pred = model.predict_matrix(&matrix)?;
    let predicted = LabelSeries::new(opts.activity.clone(), matrix.starts.clone(), pred)?;
    Ok(Detection { prepared, predicted })
}

/// Applies a saved model and writes `detections.csv` (label-file layout)
/// and, when the load carries ground truth, `timeline.csv`.
pub fn detect(model_path: &Path, src: &DataSource, opts: &WindowOptions, out_dir: &Path) -> Result<(Detection, Vec<PathBuf>)> {
    let model = SvmModel::<f64>::load(model_path)?;
    let det = run_model(&model, src, opts)?;
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let path = out_dir.join("detections.csv");
    write_labels_csv(std::slice::from_ref(&det.predicted), create(&path)?)?;
    files.push(path);
    match &det.prepared.truth {
        Some(truth) => {
            let truth = truth.restrict_to(&det.predicted.window_starts)?;
            let rows = timeline(&truth, &det.predicted, &det.prepared.load)?;
            let path = out_dir.join("timeline.csv");
            write_timeline_csv(&rows, create(&path)?)?;
            files.push(path);
        }
        None => warn!("no sub-meter columns for `{}`; timeline.csv not written", opts.activity),
    }
    Ok((det, files))
}

/// Scores a saved model on every usable window of a labeled household and
/// writes `metrics.csv` and `timeline.csv`.
pub fn evaluate(
    model_path: &Path,
    src: &DataSource,
    opts: &WindowOptions,
    out_dir: &Path,
) -> Result<(ConfusionCounts, MetricsReport<f64>, Vec<PathBuf>)> {
    let model = SvmModel::<f64>::load(model_path)?;
    let det = run_model(&model, src, opts)?;
    let truth = det.prepared.truth.as_ref().ok_or_else(|| Error::NoGroundTruth(opts.activity.clone()))?;
    let truth = truth.restrict_to(&det.predicted.window_starts)?;
    let counts = ConfusionCounts::from_labels(&truth.labels, &det.predicted.labels)?;
    let report = metrics::<f64>(&counts)?;
    let method = model.meta.method.expect("checked in run_model");

    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&[(method, report.clone())], create(&metrics_path)?)?;
    let timeline_path = out_dir.join("timeline.csv");
    write_timeline_csv(&timeline(&truth, &det.predicted, &det.prepared.load)?, create(&timeline_path)?)?;
    Ok((counts, report, vec![metrics_path, timeline_path]))
}

#[derive(Clone, Debug, Default)]
pub struct ModelOptions {
    /// State order; defaults to the activities in the order they are read.
    pub states: Option<Vec<String>>,
    pub smoothing: f64,
}

/// Builds hourly profiles and the onset transition matrix from label files
/// (ground truth or `detections.csv`) and writes `profile.csv` and
/// `transitions.json`.
pub fn model(
    label_files: &[PathBuf],
    opts: &ModelOptions,
    out_dir: &Path,
) -> Result<(Vec<HourlyProfile<f64>>, TransitionMatrix<f64>, Vec<PathBuf>)> {
    let mut series = Vec::new();
    for f in label_files {
        series.extend(parse_labels_csv(f)?);
    }
    let states = match &opts.states {
        Some(s) => ActivitySet::new(s.clone())?,
        None => ActivitySet::new(series.iter().map(|s| s.activity.clone()))?,
    };
    let selected: Vec<LabelSeries> = select_series(&series, &states)?.into_iter().cloned().collect();
    let profiles = selected.iter().map(hourly_distribution).collect::<Result<Vec<_>>>()?;
    let seq = build_state_sequence(&selected, &states)?;
    let tm = estimate_transition_matrix::<f64>(&seq, &states, opts.smoothing)?;
    for (i, zero) in tm.zero_rows.iter().enumerate() {
        if *zero {
            warn!("state `{}` has no outgoing transitions; its row is all zero", states.name(i));
        }
    }

    fs::create_dir_all(out_dir)?;
    let profile_path = out_dir.join("profile.csv");
    write_profile_csv(&profiles, create(&profile_path)?)?;
    let tm_path = out_dir.join("transitions.json");
    fs::write(&tm_path, tm.to_json()? + "\n")?;
    Ok((profiles, tm, vec![profile_path, tm_path]))
}

/// Kind of file [`plot_data`] understands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotInput {
    Metrics,
    Timeline,
    Profile,
    Transitions,
}

impl PlotInput {
    pub fn detect(path: &Path) -> Result<Self> {
        let unsupported = || Error::UnsupportedInput(path.display().to_string());
        let mut first = String::new();
        BufReader::new(File::open(path)?).read_line(&mut first)?;
        let first = first.trim();
        if first.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?).map_err(|_| unsupported())?;
            return if v.get("states").is_some() && v.get("P").is_some() { Ok(Self::Transitions) } else { Err(unsupported()) };
        }
        match first {
            "method,accuracy_pct,precision_pct,recall_pct" => Ok(Self::Metrics),
            "hour,load_kwh,truth,pred,flag" => Ok(Self::Timeline),
            "activity,hour,frequency" => Ok(Self::Profile),
            _ => Err(unsupported()),
        }
    }
}

/// Rewrites a pipeline output as a tidy CSV for external plotting and
/// returns the written path (`plot_<stem>.csv` in `out_dir`).
///
/// * metrics: `method,metric,value`
/// * timeline: `series,x,value` with two points per hour (step plot)
/// * profile: `activity,hour,frequency`
/// * transitions: `from,to,probability,count`
pub fn plot_data(input: &Path, out_dir: &Path) -> Result<(PlotInput, PathBuf)> {
    let kind = PlotInput::detect(input)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    fs::create_dir_all(out_dir)?;
    let out_path = out_dir.join(format!("plot_{stem}.csv"));
    let mut w = csv::Writer::from_writer(create(&out_path)?);
    match kind {
        PlotInput::Metrics => {
            let mut r = csv::Reader::from_path(input)?;
            w.write_record(["method", "metric", "value"])?;
            for rec in r.records() {
                let rec = rec?;
                for (i, metric) in ["accuracy", "precision", "recall"].iter().enumerate() {
                    w.write_record([&rec[0], metric, rec.get(i + 1).unwrap_or("")])?;
                }
            }
        }
        PlotInput::Timeline => {
            let mut r = csv::Reader::from_path(input)?;
            let recs = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
            w.write_record(["series", "x", "value"])?;
            for (col, series) in [(1, "load_kwh"), (2, "truth"), (3, "pred")] {
                for rec in &recs {
                    let hour: i64 = rec[0].parse().map_err(|_| Error::UnsupportedInput(input.display().to_string()))?;
                    w.write_record([series, &hour.to_string(), &rec[col]])?;
                    w.write_record([series, &(hour + 1).to_string(), &rec[col]])?;
                }
            }
        }
        PlotInput::Profile => {
            let mut r = csv::Reader::from_path(input)?;
            w.write_record(["activity", "hour", "frequency"])?;
            for rec in r.records() {
                w.write_record(&rec?)?;
            }
        }
        PlotInput::Transitions => {
            let tm = TransitionMatrix::<f64>::from_json(&fs::read_to_string(input)?)?;
            w.write_record(["from", "to", "probability", "count"])?;
            for i in 0..tm.len() {
                for j in 0..tm.len() {
                    w.write_record([
                        tm.states.name(i),
                        tm.states.name(j),
                        &format!("{:.6}", tm.p[i][j]),
                        &tm.counts[i][j].to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok((kind, out_path))
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
