//! Per-window feature extraction and the Methods 1–4 feature matrices.
//!
//! Column layout is fixed: spectrum bins `f0..f9`, then the time-domain
//! statistics, then `temp_c`. Each method selects a contiguous subset.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_timestamp, Label, WINDOW_LEN};
use crate::scalar::Real;

/// Number of amplitude-spectrum bins exported as features.
pub const SPECTRUM_BINS: usize = 10;

/// Standard deviations below this are treated as a constant column.
pub const MIN_STD: f64 = 1e-12;

pub const TIME_COLUMNS: [&str; 5] = ["d_mean", "d_std", "var", "mean", "max"];
pub const MINIMAL_TIME_COLUMNS: [&str; 2] = ["d_mean", "var"];
pub const TEMPERATURE_COLUMN: &str = "temp_c";

/// Feature sets compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Frequency-domain features only.
    M1,
    /// Time-domain features only.
    M2,
    /// Frequency and time domain.
    M3,
    /// Frequency, time domain and temperature.
    M4,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::M1, Method::M2, Method::M3, Method::M4];

    pub fn uses_spectrum(self) -> bool {
        matches!(self, Method::M1 | Method::M3 | Method::M4)
    }

    pub fn uses_time_domain(self) -> bool {
        matches!(self, Method::M2 | Method::M3 | Method::M4)
    }

    pub fn uses_temperature(self) -> bool {
        self == Method::M4
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::M1 => "M1",
            Method::M2 => "M2",
            Method::M3 => "M3",
            Method::M4 => "M4",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m1" | "1" => Ok(Method::M1),
            "m2" | "2" => Ok(Method::M2),
            "m3" | "3" => Ok(Method::M3),
            "m4" | "4" => Ok(Method::M4),
            other => Err(format!("unknown method `{other}` (expected M1..M4)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeFeatureSet {
    /// `d_mean, d_std, var, mean, max`
    #[default]
    Full,
    /// `d_mean, var` only.
    Minimal,
}

impl TimeFeatureSet {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            TimeFeatureSet::Full => &TIME_COLUMNS,
            TimeFeatureSet::Minimal => &MINIMAL_TIME_COLUMNS,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Remove the window mean before the DFT.
    #[serde(default)]
    pub detrend: bool,
    #[serde(default)]
    pub time_set: TimeFeatureSet,
}

/// One detection window: 60 minute samples of aggregate load.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowRecord<T> {
    pub start: DateTime<Utc>,
    pub samples: Vec<T>,
    /// Mean ambient temperature over the window (°C).
    pub temperature: Option<T>,
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector<T> {
    /// `[mean(d), std(d), var(x), mean(x), max(x)]` with `d` the first differences.
    pub time_domain: [T; 5],
    /// `|X_0| .. |X_9|`, unnormalized.
    pub freq_domain: Vec<T>,
    pub temperature: Option<T>,
}

fn check_window<T>(window: &[T]) -> Result<()> {
    if window.len() != WINDOW_LEN {
        return Err(Error::WrongWindowLength { expected: WINDOW_LEN, got: window.len() });
    }
    Ok(())
}

/// Running mean and population variance (Welford).
fn mean_var<T: Real>(xs: impl Iterator<Item = T>) -> (T, T) {
    let mut n = T::zero();
    let mut mean = T::zero();
    let mut m2 = T::zero();
    for x in xs {
        n += T::one();
        let delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    if n == T::zero() {
        return (T::zero(), T::zero());
    }
    (mean, (m2 / n).max(T::zero()))
}

/// `[mean(d), std(d), var(x), mean(x), max(x)]` for a 60-sample window, where
/// `d[i] = x[i+1] - x[i]`. Spreads are population statistics.
pub fn time_domain_features<T: Real>(window: &[T]) -> Result<[T; 5]> {
    check_window(window)?;
    let (d_mean, d_var) = mean_var(window.windows(2).map(|w| w[1] - w[0]));
    let (mean, var) = mean_var(window.iter().copied());
    let max = window.iter().copied().fold(T::neg_infinity(), T::max);
    Ok([d_mean, d_var.sqrt(), var, mean, max])
}

/// Forward DFT magnitudes of a 60-sample window.
pub struct SpectrumAnalyzer<T: Real> {
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> SpectrumAnalyzer<T> {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(WINDOW_LEN);
        Self { fft }
    }

    /// `|X_k|` for `k < bins`, no `1/N` normalization.
    pub fn amplitudes(&self, window: &[T], bins: usize, detrend: bool) -> Result<Vec<T>> {
        check_window(window)?;
        if bins > WINDOW_LEN {
            return Err(Error::InvalidBins { requested: bins, len: WINDOW_LEN });
        }
        let offset = if detrend {
            window.iter().copied().sum::<T>() / T::from_usize_lossy(WINDOW_LEN)
        } else {
            T::zero()
        };
        let mut buf: Vec<Complex<T>> = window.iter().map(|&x| Complex::new(x - offset, T::zero())).collect();
        self.fft.process(&mut buf);
        Ok(buf[..bins].iter().map(|c| c.norm()).collect())
    }
}

impl<T: Real> Default for SpectrumAnalyzer<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// First `bins` DFT amplitudes of a 60-sample window.
pub fn amplitude_spectrum<T: Real>(window: &[T], bins: usize) -> Result<Vec<T>> {
    SpectrumAnalyzer::new().amplitudes(window, bins, false)
}

/// Per-window feature extraction with a cached FFT plan.
pub struct FeatureExtractor<T: Real> {
    pub config: FeatureConfig,
    spectrum: SpectrumAnalyzer<T>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(config: FeatureConfig) -> Self {
        Self { config, spectrum: SpectrumAnalyzer::new() }
    }

    pub fn extract(&self, window: &WindowRecord<T>) -> Result<FeatureVector<T>> {
        Ok(FeatureVector {
            time_domain: time_domain_features(&window.samples)?,
            freq_domain: self.spectrum.amplitudes(&window.samples, SPECTRUM_BINS, self.config.detrend)?,
            temperature: window.temperature,
        })
    }

    pub fn columns(&self, method: Method) -> Vec<String> {
        let mut cols = Vec::new();
        if method.uses_spectrum() {
            cols.extend((0..SPECTRUM_BINS).map(|k| format!("f{k}")));
        }
        if method.uses_time_domain() {
            cols.extend(self.config.time_set.columns().iter().map(|s| s.to_string()));
        }
        if method.uses_temperature() {
            cols.push(TEMPERATURE_COLUMN.to_string());
        }
        cols
    }

    /// Lays out one feature vector as a raw (unstandardized) matrix row.
    pub fn row(&self, fv: &FeatureVector<T>, method: Method) -> Result<Vec<T>> {
        let mut row = Vec::with_capacity(SPECTRUM_BINS + TIME_COLUMNS.len() + 1);
        if method.uses_spectrum() {
            row.extend_from_slice(&fv.freq_domain);
        }
        if method.uses_time_domain() {
            match self.config.time_set {
                TimeFeatureSet::Full => row.extend_from_slice(&fv.time_domain),
                TimeFeatureSet::Minimal => row.extend([fv.time_domain[0], fv.time_domain[2]]),
            }
        }
        if method.uses_temperature() {
            row.push(fv.temperature.ok_or(Error::MissingTemperature)?);
        }
        Ok(row)
    }

    /// Builds the chronologically ordered feature matrix for `method`.
    pub fn assemble(&self, windows: &[WindowRecord<T>], method: Method) -> Result<FeatureMatrix<T>> {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.sort_by_key(|&i| windows[i].start);
        let mut rows = Vec::with_capacity(windows.len());
        let mut labels = Vec::with_capacity(windows.len());
        let mut starts = Vec::with_capacity(windows.len());
        for i in order {
            let w = &windows[i];
            let fv = self.extract(w)?;
            rows.push(self.row(&fv, method)?);
            labels.push(w.label);
            starts.push(w.start);
        }
        Ok(FeatureMatrix {
            method,
            config: self.config,
            columns: self.columns(method),
            rows,
            labels,
            starts,
            scaler: None,
        })
    }
}

/// Builds the feature matrix for `method` with the given configuration.
pub fn assemble<T: Real>(windows: &[WindowRecord<T>], method: Method, config: FeatureConfig) -> Result<FeatureMatrix<T>> {
    FeatureExtractor::new(config).assemble(windows, method)
}

/// Column means and population standard deviations of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Scaler<T> {
    pub fn fit(rows: &[Vec<T>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or(Error::EmptyMatrix)?;
        let mut mean = Vec::with_capacity(width);
        let mut std = Vec::with_capacity(width);
        for c in 0..width {
            let (m, v) = mean_var(rows.iter().map(|r| r[c]));
            mean.push(m);
            std.push(v.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `(x - mean) / std`, or 0 for columns with `std < 1e-12`.
    pub fn transform(&self, row: &[T]) -> Result<Vec<T>> {
        if row.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: row.len() });
        }
        let floor = T::lit(MIN_STD);
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if s < floor { T::zero() } else { (x - m) / s })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    pub method: Method,
    pub config: FeatureConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<T>>,
    pub labels: Vec<Option<Label>>,
    pub starts: Vec<DateTime<Utc>>,
    /// Present once the rows have been standardized.
    pub scaler: Option<Scaler<T>>,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn is_standardized(&self) -> bool {
        self.scaler.is_some()
    }

    /// Rows at `indices`, keeping column layout and scaler.
    pub fn select(&self, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut out = Self {
            method: self.method,
            config: self.config,
            columns: self.columns.clone(),
            rows: Vec::new(),
            labels: Vec::new(),
            starts: Vec::new(),
            scaler: self.scaler.clone(),
        };
        for i in indices {
            out.rows.push(self.rows[i].clone());
            out.labels.push(self.labels[i]);
            out.starts.push(self.starts[i]);
        }
        out
    }

    /// Writes `<columns>,label` with a leading `timestamp` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("label".into());
        w.write_record(&header)?;
        for ((row, label), start) in self.rows.iter().zip(&self.labels).zip(&self.starts) {
            let mut rec = vec![format_timestamp(*start)];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push(label.map(|l| l.as_digit().to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Z-scores every column. Without `stats` the matrix is treated as the
/// training split and its own statistics are fitted and recorded.
pub fn standardize<T: Real>(matrix: &FeatureMatrix<T>, stats: Option<&Scaler<T>>) -> Result<FeatureMatrix<T>> {
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if matrix.is_standardized() {
        return Err(Error::AlreadyStandardized);
    }
    let scaler = match stats {
        Some(s) => s.clone(),
        None => Scaler::fit(&matrix.rows)?,
    };
    let rows = matrix.rows.iter().map(|r| scaler.transform(r)).collect::<Result<Vec<_>>>()?;
    let mut out = matrix.clone();
    out.rows = rows;
    out.scaler = Some(scaler);
    Ok(out)
}
