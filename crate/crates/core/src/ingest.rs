//! Load/weather CSV ingestion, grid alignment, activity bundling and
//! ground-truth window labels.
//!
//! Every series lives on a one-minute UTC grid. Minutes absent from the
//! source file are kept as invalid rows so that gap handling can decide
//! between interpolation and window exclusion.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, TimeZone, Timelike, Utc};
use indexmap::IndexMap;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::WindowRecord;

/// Samples per detection window (one clock hour of minute readings).
pub const WINDOW_LEN: usize = 60;
/// Grid step of load tables, in seconds.
pub const STEP_SECS: i64 = 60;
pub const DEFAULT_THRESHOLD_KW: f64 = 0.05;
pub const DEFAULT_MAX_GAP_MINUTES: usize = 5;

const AGGREGATE_COLUMN: &str = "aggregate";
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inactive,
    Active,
}

impl Label {
    pub fn from_active(active: bool) -> Self {
        if active {
            Label::Active
        } else {
            Label::Inactive
        }
    }

    pub fn is_active(self) -> bool {
        self == Label::Active
    }

    /// `+1` for active, `-1` for inactive.
    pub fn sign(self) -> i8 {
        if self.is_active() {
            1
        } else {
            -1
        }
    }

    pub fn as_digit(self) -> u8 {
        u8::from(self.is_active())
    }
}

pub fn parse_timestamp(raw: &str, row: usize) -> Result<DateTime<Utc>> {
    let s = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%#z", "%Y-%m-%dT%H:%M:%S%#z"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Ok(t.with_timezone(&Utc));
        }
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Utc.from_utc_datetime(&t));
        }
    }
    Err(Error::BadTimestamp { row, value: raw.to_string() })
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn is_hour_aligned(t: DateTime<Utc>) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

fn parse_power(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::BadValue {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite { row, column: column.to_string() });
    }
    if v < 0.0 {
        return Err(Error::NegativePower { row, column: column.to_string(), value: v });
    }
    Ok(v)
}

/// Minute-resolution per-column power series (kW) for one consumer.
///
/// Values are stored column-major. Rows with `valid[row] == false` are
/// minutes that were missing from the source (their values are zero and
/// carry no meaning).
#[derive(Clone, Debug, PartialEq)]
pub struct LoadTable {
    pub consumer_id: String,
    start: DateTime<Utc>,
    columns: Vec<String>,
    values: Vec<Vec<f64>>,
    aggregate: Vec<f64>,
    aggregate_metered: bool,
    valid: Vec<bool>,
}

impl LoadTable {
    /// Builds a fully valid table. When `aggregate` is `None` it is derived
    /// as the row sum of `values`.
    pub fn new(
        consumer_id: impl Into<String>,
        start: DateTime<Utc>,
        columns: Vec<String>,
        values: Vec<Vec<f64>>,
        aggregate: Option<Vec<f64>>,
    ) -> Result<Self> {
        let rows = values.first().map(Vec::len).or(aggregate.as_ref().map(Vec::len)).unwrap_or(0);
        let valid = vec![true; rows];
        Self::from_parts(consumer_id.into(), start, columns, values, aggregate, valid)
    }

    fn from_parts(
        consumer_id: String,
        start: DateTime<Utc>,
        columns: Vec<String>,
        values: Vec<Vec<f64>>,
        aggregate: Option<Vec<f64>>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if start.second() != 0 || start.nanosecond() != 0 {
            return Err(Error::MisalignedTimestamp { row: 0, step_secs: STEP_SECS });
        }
        if columns.len() != values.len() {
            return Err(Error::GridMismatch);
        }
        let rows = valid.len();
        if values.iter().any(|c| c.len() != rows) {
            return Err(Error::GridMismatch);
        }
        if rows == 0 {
            return Err(Error::TooFewRows { rows });
        }
        for (name, col) in columns.iter().zip(&values) {
            for (row, &v) in col.iter().enumerate() {
                if !valid[row] {
                    continue;
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, column: name.clone() });
                }
                if v < 0.0 {
                    return Err(Error::NegativePower { row, column: name.clone(), value: v });
                }
            }
        }
        let aggregate_metered = aggregate.is_some();
        let aggregate = match aggregate {
            Some(a) => {
                if a.len() != rows {
                    return Err(Error::GridMismatch);
                }
                for (row, &v) in a.iter().enumerate() {
                    if valid[row] && !(v.is_finite() && v >= 0.0) {
                        return Err(Error::NegativePower {
                            row,
                            column: AGGREGATE_COLUMN.to_string(),
                            value: v,
                        });
                    }
                }
                a
            }
            None => (0..rows).map(|r| values.iter().map(|c| c[r]).sum()).collect(),
        };
        Ok(Self { consumer_id, start, columns, values, aggregate, aggregate_metered, valid })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// Exclusive end of the covered span.
    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.len())
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn timestamp(&self, row: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(STEP_SECS * row as i64)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Column by name, with `"aggregate"` resolving to the aggregate series.
    pub fn series(&self, name: &str) -> Result<&[f64]> {
        match self.column(name) {
            Ok(c) => Ok(c),
            Err(_) if name == AGGREGATE_COLUMN => Ok(&self.aggregate),
            Err(e) => Err(e),
        }
    }

    pub fn aggregate(&self) -> &[f64] {
        &self.aggregate
    }

    /// Whether the aggregate came from a metered `aggregate` column rather
    /// than the row sum.
    pub fn is_aggregate_metered(&self) -> bool {
        self.aggregate_metered
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Errors unless the table spans at least one full window.
    pub fn require_window(&self) -> Result<()> {
        if self.len() < WINDOW_LEN {
            return Err(Error::TooFewRows { rows: self.len() });
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Complete clock-hour windows inside the table as `(hour start, first row)`.
    pub fn hour_windows(&self) -> Vec<(DateTime<Utc>, usize)> {
        let skip = match self.start.minute() {
            0 => 0,
            m => 60 - m as usize,
        };
        (skip..)
            .step_by(WINDOW_LEN)
            .take_while(|&r| r + WINDOW_LEN <= self.len())
            .map(|r| (self.timestamp(r), r))
            .collect()
    }

    /// Hour windows whose minutes are all valid.
    pub fn usable_windows(&self) -> Vec<(DateTime<Utc>, usize)> {
        self.hour_windows()
            .into_iter()
            .filter(|&(_, r)| self.valid[r..r + WINDOW_LEN].iter().all(|&v| v))
            .collect()
    }

    fn slice_rows(&self, from: usize, to: usize) -> Self {
        Self {
            consumer_id: self.consumer_id.clone(),
            start: self.timestamp(from),
            columns: self.columns.clone(),
            values: self.values.iter().map(|c| c[from..to].to_vec()).collect(),
            aggregate: self.aggregate[from..to].to_vec(),
            aggregate_metered: self.aggregate_metered,
            valid: self.valid[from..to].to_vec(),
        }
    }
}

pub fn parse_load_csv(path: impl AsRef<Path>) -> Result<LoadTable> {
    let path = path.as_ref();
    let consumer = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_load_reader(File::open(path)?, &consumer)
}

/// Parses `timestamp,<col>...` CSV text. A column literally named
/// `aggregate` is taken as the metered total; otherwise the total is the
/// row sum. Minutes absent from the file become invalid rows.
pub fn parse_load_reader<R: Read>(reader: R, consumer_id: &str) -> Result<LoadTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(missing_load_header()),
    };
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("timestamp") {
        return Err(missing_load_header());
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let agg_idx = names.iter().position(|n| n == AGGREGATE_COLUMN);

    let mut times: Vec<DateTime<Utc>> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::BadValue {
                row,
                column: "<record>".into(),
                value: format!("{} fields, expected {}", rec.len(), header.len()),
            });
        }
        let t = parse_timestamp(&rec[0], row)?;
        if t.second() != 0 || t.nanosecond() != 0 {
            return Err(Error::MisalignedTimestamp { row, step_secs: STEP_SECS });
        }
        if let Some(&prev) = times.last() {
            if t == prev {
                return Err(Error::DuplicateTimestamp { row });
            }
            if t < prev {
                return Err(Error::NonMonotoneTimestamps { row });
            }
        }
        let vals = names
            .iter()
            .enumerate()
            .map(|(c, name)| parse_power(&rec[c + 1], row, name))
            .collect::<Result<Vec<_>>>()?;
        times.push(t);
        rows.push(vals);
    }
    let Some(&start) = times.first() else {
        return Err(Error::TooFewRows { rows: 0 });
    };
    let span = ((*times.last().unwrap() - start).num_seconds() / STEP_SECS) as usize + 1;
    let mut valid = vec![false; span];
    let mut dense = vec![vec![0.0; span]; names.len()];
    for (t, vals) in times.iter().zip(&rows) {
        let r = ((*t - start).num_seconds() / STEP_SECS) as usize;
        valid[r] = true;
        for (c, &v) in vals.iter().enumerate() {
            dense[c][r] = v;
        }
    }
    let aggregate = agg_idx.map(|i| dense.remove(i));
    let mut columns = names;
    if let Some(i) = agg_idx {
        columns.remove(i);
    }
    LoadTable::from_parts(consumer_id.to_string(), start, columns, dense, aggregate, valid)
}

fn missing_load_header() -> Error {
    Error::MissingHeader { expected: "timestamp,<column>,...".into() }
}

/// Writes the valid rows of `table`; the aggregate is written only when it
/// was metered, so a derived total is re-derived on the next parse.
pub fn write_load_csv<W: Write>(table: &LoadTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(table.columns.iter().cloned());
    if table.aggregate_metered {
        header.push(AGGREGATE_COLUMN.into());
    }
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for row in 0..table.len() {
        if !table.valid[row] {
            continue;
        }
        rec.clear();
        rec.push(format_timestamp(table.timestamp(row)));
        rec.extend(table.values.iter().map(|c| c[row].to_string()));
        if table.aggregate_metered {
            rec.push(table.aggregate[row].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Ambient temperature (°C) on a regular grid whose step divides one hour.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureSeries {
    start: DateTime<Utc>,
    step_secs: i64,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl TemperatureSeries {
    pub fn new(start: DateTime<Utc>, step_secs: i64, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::from_parts(start, step_secs, values, valid)
    }

    fn from_parts(start: DateTime<Utc>, step_secs: i64, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if step_secs <= 0 || 3600 % step_secs != 0 {
            return Err(Error::InvalidStep { step_secs });
        }
        if let Some(row) = values.iter().zip(&valid).position(|(v, &ok)| ok && !v.is_finite()) {
            return Err(Error::NonFinite { row, column: "temperature_c".into() });
        }
        Ok(Self { start, step_secs, values, valid })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step_secs(&self) -> i64 {
        self.step_secs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_secs * i as i64)
    }
}

pub fn parse_weather_csv(path: impl AsRef<Path>) -> Result<TemperatureSeries> {
    parse_weather_reader(File::open(path)?)
}

/// Parses `timestamp,temperature_c`. The step is the smallest spacing
/// between consecutive readings; skipped readings become invalid samples.
pub fn parse_weather_reader<R: Read>(reader: R) -> Result<TemperatureSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let missing = || Error::MissingHeader { expected: "timestamp,temperature_c".into() };
    let header = records.next().ok_or_else(missing)??;
    if header.len() != 2 || !header[0].eq_ignore_ascii_case("timestamp") || &header[1] != "temperature_c" {
        return Err(missing());
    }
    let mut times = Vec::new();
    let mut temps = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec?;
        let t = parse_timestamp(&rec[0], row)?;
        let raw = rec.get(1).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| Error::BadValue {
            row,
            column: "temperature_c".into(),
            value: raw.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite { row, column: "temperature_c".into() });
        }
        if let Some(&prev) = times.last() {
            if t == prev {
                return Err(Error::DuplicateTimestamp { row });
            }
            if t < prev {
                return Err(Error::NonMonotoneTimestamps { row });
            }
        }
        times.push(t);
        temps.push(v);
    }
    let Some(&start) = times.first() else {
        return Err(Error::NoOverlap);
    };
    let step_secs = times
        .windows(2)
        .map(|w| (w[1] - w[0]).num_seconds())
        .min()
        .unwrap_or(3600);
    if step_secs <= 0 || 3600 % step_secs != 0 {
        return Err(Error::InvalidStep { step_secs });
    }
    let span = ((*times.last().unwrap() - start).num_seconds() / step_secs) as usize + 1;
    let mut values = vec![0.0; span];
    let mut valid = vec![false; span];
    for (row, (t, v)) in times.iter().zip(temps).enumerate() {
        let offset = (*t - start).num_seconds();
        if offset % step_secs != 0 {
            return Err(Error::MisalignedTimestamp { row: row + 1, step_secs });
        }
        let i = (offset / step_secs) as usize;
        values[i] = v;
        valid[i] = true;
    }
    TemperatureSeries::from_parts(start, step_secs, values, valid)
}

pub fn write_weather_csv<W: Write>(temp: &TemperatureSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "temperature_c"])?;
    for (i, (&v, &ok)) in temp.values.iter().zip(&temp.valid).enumerate() {
        if ok {
            w.write_record([format_timestamp(temp.timestamp(i)), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Linearly interpolates every internal run of missing samples no longer
/// than `max_len`; longer runs and leading/trailing runs stay invalid.
fn fill_runs(valid: &mut [bool], max_len: usize, series: &mut [&mut [f64]]) {
    let n = valid.len();
    let mut i = 0;
    while i < n {
        if valid[i] {
            i += 1;
            continue;
        }
        let a = i;
        while i < n && !valid[i] {
            i += 1;
        }
        let b = i;
        if a == 0 || b == n || b - a > max_len {
            continue;
        }
        let span = (b - a + 1) as f64;
        for s in series.iter_mut() {
            let (lo, hi) = (s[a - 1], s[b]);
            for (k, r) in (a..b).enumerate() {
                let frac = (k + 1) as f64 / span;
                s[r] = lo + (hi - lo) * frac;
            }
        }
        valid[a..b].iter_mut().for_each(|v| *v = true);
    }
}

/// Interpolates load gaps of at most `max_gap` minutes. Windows touching
/// longer gaps remain unusable.
pub fn fill_gaps(load: &LoadTable, max_gap: usize) -> LoadTable {
    let mut out = load.clone();
    let mut series: Vec<&mut [f64]> = out.values.iter_mut().map(Vec::as_mut_slice).collect();
    series.push(out.aggregate.as_mut_slice());
    fill_runs(&mut out.valid, max_gap, &mut series);
    out
}

/// Clips both series to their common span on the one-minute grid, fills
/// short gaps and resamples temperature by linear interpolation.
///
/// A temperature gap is measured as the duration of its missing readings;
/// gaps longer than `max_gap` minutes leave the affected minutes invalid.
pub fn align_and_fill(
    load: &LoadTable,
    temp: &TemperatureSeries,
    max_gap: usize,
) -> Result<(LoadTable, TemperatureSeries)> {
    load.require_window()?;
    let load = fill_gaps(load, max_gap);

    let mut t = temp.clone();
    let max_samples = (max_gap as i64 * 60 / t.step_secs) as usize;
    fill_runs(&mut t.valid, max_samples, &mut [t.values.as_mut_slice()]);

    let last_temp = t.timestamp(t.len().saturating_sub(1));
    let mut start = load.start.max(t.start);
    if start.second() != 0 || start.nanosecond() != 0 {
        start = start + Duration::seconds(60 - i64::from(start.second()));
        start = start.with_nanosecond(0).unwrap_or(start);
    }
    let end = load.end().min(last_temp + Duration::seconds(STEP_SECS));
    if t.is_empty() || end <= start || (end - start).num_seconds() < 3600 {
        return Err(Error::NoOverlap);
    }
    let from = ((start - load.start).num_seconds() / STEP_SECS) as usize;
    let to = ((end - load.start).num_seconds() / STEP_SECS) as usize;
    let load = load.slice_rows(from, to);

    let mut values = Vec::with_capacity(to - from);
    let mut valid = Vec::with_capacity(to - from);
    for row in 0..load.len() {
        let offset = (load.timestamp(row) - t.start).num_seconds();
        let i = (offset / t.step_secs) as usize;
        let rem = offset % t.step_secs;
        let sample = if rem == 0 {
            t.valid[i].then(|| t.values[i])
        } else if i + 1 < t.len() && t.valid[i] && t.valid[i + 1] {
            let frac = rem as f64 / t.step_secs as f64;
            Some(t.values[i] + (t.values[i + 1] - t.values[i]) * frac)
        } else {
            None
        };
        values.push(sample.unwrap_or(0.0));
        valid.push(sample.is_some());
    }
    let temp = TemperatureSeries::from_parts(load.start, STEP_SECS, values, valid)?;

    let any_usable = load
        .usable_windows()
        .iter()
        .any(|&(_, r)| temp.valid[r..r + WINDOW_LEN].iter().all(|&v| v));
    if !any_usable {
        return Err(Error::AllGaps);
    }
    Ok((load, temp))
}

/// Mapping from activity name to the appliance columns that realize it.
///
/// Keeps insertion order; an appliance belongs to at most one activity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ActivityMap {
    entries: IndexMap<String, Vec<String>>,
}

impl ActivityMap {
    pub fn new<I, A, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, Vec<S>)>,
        A: Into<String>,
        S: Into<String>,
    {
        let mut map: IndexMap<String, Vec<String>> = IndexMap::new();
        let mut owner: HashMap<String, String> = HashMap::new();
        for (activity, appliances) in entries {
            let activity = activity.into();
            let appliances: Vec<String> = appliances.into_iter().map(Into::into).collect();
            if appliances.is_empty() {
                return Err(Error::EmptyActivity(activity));
            }
            for a in &appliances {
                if let Some(first) = owner.insert(a.clone(), activity.clone()) {
                    return Err(Error::OverlappingActivity {
                        appliance: a.clone(),
                        first,
                        second: activity,
                    });
                }
            }
            if map.insert(activity.clone(), appliances).is_some() {
                return Err(Error::DuplicateState(activity));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: IndexMap<String, Vec<String>> = serde_json::from_str(s)?;
        Self::new(raw)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("string map serializes")
    }

    /// Default bundling used for the shipped synthetic households.
    pub fn default_map() -> Self {
        Self::new([
            ("sleeping", vec!["bedroom"]),
            ("grooming", vec!["bathroom"]),
            ("food-preparing", vec!["oven", "microwave"]),
            ("dish-washing", vec!["dishwasher"]),
            ("laundry", vec!["washer", "dryer"]),
            ("cooling-heating", vec!["furnace", "air_compressor"]),
        ])
        .expect("default map is valid")
    }

    pub fn activities(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn appliances(&self, activity: &str) -> Option<&[String]> {
        self.entries.get(activity).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load columns that no activity claims.
    pub fn unmapped_columns<'a>(&self, load: &'a LoadTable) -> Vec<&'a str> {
        load.columns
            .iter()
            .filter(|c| !self.entries.values().any(|apps| apps.contains(c)))
            .map(String::as_str)
            .collect()
    }
}

/// Sums appliance columns into one column per activity. The aggregate and
/// validity mask carry over unchanged.
pub fn bundle_activities(load: &LoadTable, map: &ActivityMap) -> Result<LoadTable> {
    let mut columns = Vec::with_capacity(map.len());
    let mut values = Vec::with_capacity(map.len());
    for (activity, appliances) in map.iter() {
        let mut sum = vec![0.0; load.len()];
        for a in appliances {
            let col = load.column(a).map_err(|_| Error::UnknownAppliance(a.clone()))?;
            sum.iter_mut().zip(col).for_each(|(s, v)| *s += v);
        }
        columns.push(activity.to_string());
        values.push(sum);
    }
    Ok(LoadTable {
        consumer_id: load.consumer_id.clone(),
        start: load.start,
        columns,
        values,
        aggregate: load.aggregate.clone(),
        aggregate_metered: load.aggregate_metered,
        valid: load.valid.clone(),
    })
}

/// Per-window active/inactive status of one activity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSeries {
    pub activity: String,
    pub window_starts: Vec<DateTime<Utc>>,
    pub labels: Vec<Label>,
}

impl LabelSeries {
    pub fn new(activity: impl Into<String>, window_starts: Vec<DateTime<Utc>>, labels: Vec<Label>) -> Result<Self> {
        if window_starts.len() != labels.len() {
            return Err(Error::GridMismatch);
        }
        for (i, w) in window_starts.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonMonotoneTimestamps { row: i + 2 });
            }
        }
        if let Some(row) = window_starts.iter().position(|t| !is_hour_aligned(*t)) {
            return Err(Error::MisalignedTimestamp { row: row + 1, step_secs: 3600 });
        }
        Ok(Self { activity: activity.into(), window_starts, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_active()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DateTime<Utc>, Label)> + '_ {
        self.window_starts.iter().copied().zip(self.labels.iter().copied())
    }

    /// Restricts the series to the given window starts (which must be a
    /// subset, in order).
    pub fn restrict_to(&self, starts: &[DateTime<Utc>]) -> Result<Self> {
        let index: HashMap<_, _> = self.window_starts.iter().zip(&self.labels).collect();
        let labels = starts
            .iter()
            .map(|t| index.get(t).map(|l| **l).ok_or(Error::TimestampMismatch))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.activity.clone(), starts.to_vec(), labels)
    }
}

/// Labels each usable clock-hour window of `column` as active iff its mean
/// power strictly exceeds `threshold` kW. A trailing partial hour is
/// dropped with a warning.
pub fn window_labels(load: &LoadTable, column: &str, threshold: f64) -> Result<LabelSeries> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    load.require_window()?;
    let series = load.series(column)?;
    let windows = load.hour_windows();
    let tail = windows.last().map_or(load.len(), |&(_, r)| load.len() - (r + WINDOW_LEN));
    if tail > 0 {
        warn!("dropping {tail} trailing minutes that do not form a complete window");
    }
    let mut starts = Vec::new();
    let mut labels = Vec::new();
    for (t, r) in load.usable_windows() {
        starts.push(t);
        labels.push(Label::from_active(label_window(&series[r..r + WINDOW_LEN], threshold)));
    }
    LabelSeries::new(column, starts, labels)
}

fn label_window(window: &[f64], threshold: f64) -> bool {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    mean > threshold
}

/// Reads a wide label file `timestamp,<activity>...` with `0`/`1` cells.
pub fn parse_labels_csv(path: impl AsRef<Path>) -> Result<Vec<LabelSeries>> {
    parse_labels_reader(File::open(path)?)
}

pub fn parse_labels_reader<R: Read>(reader: R) -> Result<Vec<LabelSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let missing = || Error::MissingHeader { expected: "timestamp,<activity>,...".into() };
    let header = records.next().ok_or_else(missing)??;
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("timestamp") {
        return Err(missing());
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut starts = Vec::new();
    let mut cols: Vec<Vec<Label>> = vec![Vec::new(); names.len()];
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec?;
        starts.push(parse_timestamp(&rec[0], row)?);
        for (c, name) in names.iter().enumerate() {
            let raw = rec.get(c + 1).unwrap_or("");
            let label = match raw {
                "1" | "true" | "active" => Label::Active,
                "0" | "false" | "inactive" => Label::Inactive,
                _ => {
                    return Err(Error::BadValue { row, column: name.clone(), value: raw.to_string() });
                }
            };
            cols[c].push(label);
        }
    }
    names
        .into_iter()
        .zip(cols)
        .map(|(name, labels)| LabelSeries::new(name, starts.clone(), labels))
        .collect()
}

/// Writes label series sharing one window grid as `timestamp,<activity>...`.
pub fn write_labels_csv<W: Write>(series: &[LabelSeries], writer: W) -> Result<()> {
    let Some(first) = series.first() else {
        return Err(Error::GridMismatch);
    };
    if series.iter().any(|s| s.window_starts != first.window_starts) {
        return Err(Error::GridMismatch);
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.iter().map(|s| s.activity.clone()));
    w.write_record(&header)?;
    for (i, t) in first.window_starts.iter().enumerate() {
        let mut rec = vec![format_timestamp(*t)];
        rec.extend(series.iter().map(|s| s.labels[i].as_digit().to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Cuts `load.aggregate` into detection-window records.
///
/// Only windows usable in both `load` and `temp` (when given) are emitted.
/// `temp` must already be on the load grid (see [`align_and_fill`]).
/// `truth`, when given, supplies the label of each emitted window; windows
/// it does not cover get no label.
pub fn detection_windows(
    load: &LoadTable,
    temp: Option<&TemperatureSeries>,
    truth: Option<&LabelSeries>,
) -> Result<Vec<WindowRecord<f64>>> {
    load.require_window()?;
    if let Some(t) = temp {
        if t.start != load.start || t.step_secs != STEP_SECS || t.len() != load.len() {
            return Err(Error::GridMismatch);
        }
    }
    let truth: Option<HashMap<DateTime<Utc>, Label>> = truth.map(|s| s.iter().collect());
    let mut out = Vec::new();
    for (start, r) in load.usable_windows() {
        let range = r..r + WINDOW_LEN;
        let temperature = match temp {
            Some(t) => {
                if !t.valid[range.clone()].iter().all(|&v| v) {
                    continue;
                }
                Some(t.values[range.clone()].iter().sum::<f64>() / WINDOW_LEN as f64)
            }
            None => None,
        };
        let label = truth.as_ref().and_then(|m| m.get(&start).copied());
        out.push(WindowRecord {
            start,
            samples: load.aggregate[range].to_vec(),
            temperature,
            label,
        });
    }
    Ok(out)
}
