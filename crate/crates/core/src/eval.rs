//! Splitting, confusion counts, accuracy/precision/recall, the four-method
//! ablation and detection-timeline export.

use std::io::Write;
use std::ops::Range;

use chrono::Duration;
use log::warn;
use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::features::{standardize, FeatureConfig, FeatureExtractor, Method, WindowRecord};
use crate::ingest::{Label, LabelSeries, LoadTable, WINDOW_LEN};
use crate::scalar::Real;
use crate::svm::{train, Hyperparams, SvmModel};

pub const MIN_SPLIT_WINDOWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15 }
    }
}

/// Contiguous chronological index ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological split with floor allocation for train and validation and
/// the remainder going to test.
pub fn split(n: usize, fractions: SplitFractions) -> Result<Split> {
    let SplitFractions { train, val, test } = fractions;
    let parts = [train, val, test];
    if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions);
    }
    if n < MIN_SPLIT_WINDOWS {
        return Err(Error::TooFewWindows { min: MIN_SPLIT_WINDOWS, got: n });
    }
    // guard against 0.7 * 100 = 69.999... style rounding
    let alloc = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let n_train = alloc(train).min(n);
    let n_val = alloc(val).min(n - n_train);
    Ok(Split { train: 0..n_train, val: n_train..n_train + n_val, test: n_train + n_val..n })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, truth: Label, pred: Label) {
        match (truth, pred) {
            (Label::Active, Label::Active) => self.tp += 1,
            (Label::Inactive, Label::Inactive) => self.tn += 1,
            (Label::Inactive, Label::Active) => self.fp += 1,
            (Label::Active, Label::Inactive) => self.fn_ += 1,
        }
    }

    pub fn from_labels(truth: &[Label], pred: &[Label]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::TimestampMismatch);
        }
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            c.record(t, p);
        }
        Ok(c)
    }
}

/// Tallies `truth` against `pred`; both must cover the same windows.
pub fn confusion(truth: &LabelSeries, pred: &LabelSeries) -> Result<ConfusionCounts> {
    if truth.window_starts != pred.window_starts {
        return Err(Error::TimestampMismatch);
    }
    ConfusionCounts::from_labels(&truth.labels, &pred.labels)
}

/// Percentages in `[0, 100]`; precision and recall are `None` when their
/// denominator is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport<T> {
    pub accuracy: T,
    pub precision: Option<T>,
    pub recall: Option<T>,
}

fn percent<T: Num + FromPrimitive>(num: u64, den: u64) -> Option<T> {
    if den == 0 {
        return None;
    }
    // 100 * num is formed in integers so a float scalar rounds only once
    let scaled = T::from_u128(100 * u128::from(num))?;
    Some(scaled / T::from_u64(den)?)
}

/// Accuracy `(TP+TN)/total`, precision `TP/(TP+FP)` and recall
/// `TP/(TP+FN)`, as percentages. Works for any field scalar, including
/// exact rationals.
pub fn metrics<T: Num + FromPrimitive>(c: &ConfusionCounts) -> Result<MetricsReport<T>> {
    let accuracy = percent(c.tp + c.tn, c.total()).ok_or(Error::EmptyCounts)?;
    Ok(MetricsReport {
        accuracy,
        precision: percent(c.tp, c.tp + c.fp),
        recall: percent(c.tp, c.tp + c.fn_),
    })
}

#[derive(Clone, Debug)]
pub struct MethodResult<T> {
    pub method: Method,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport<T>,
    pub model: SvmModel<T>,
}

#[derive(Clone, Debug)]
pub struct AblationReport<T> {
    pub split: Split,
    pub results: Vec<MethodResult<T>>,
    /// Methods that could not run (M4 without temperature).
    pub skipped: Vec<Method>,
}

impl<T: Real> AblationReport<T> {
    pub fn get(&self, method: Method) -> Option<&MethodResult<T>> {
        self.results.iter().find(|r| r.method == method)
    }
}

/// Trains one model per method on the same chronological split and scores
/// each on the test range. Windows must all carry labels.
pub fn ablation_run<T: Real>(
    windows: &[WindowRecord<T>],
    methods: &[Method],
    config: FeatureConfig,
    hp: &Hyperparams,
    fractions: SplitFractions,
) -> Result<AblationReport<T>> {
    let mut sorted: Vec<&WindowRecord<T>> = windows.iter().collect();
    sorted.sort_by_key(|w| w.start);
    if let Some(w) = sorted.iter().find(|w| w.label.is_none()) {
        return Err(Error::UnlabeledWindow(w.start.to_rfc3339()));
    }
    let sorted: Vec<WindowRecord<T>> = sorted.into_iter().cloned().collect();
    let split = split(sorted.len(), fractions)?;
    let has_temperature = sorted.iter().all(|w| w.temperature.is_some());

    let mut runnable = Vec::new();
    let mut skipped = Vec::new();
    for &m in methods {
        if m.uses_temperature() && !has_temperature {
            warn!("skipping {m}: no temperature data");
            skipped.push(m);
        } else {
            runnable.push(m);
        }
    }

    let outcomes: Vec<Result<MethodResult<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = runnable
            .iter()
            .map(|&m| {
                let (sorted, split) = (&sorted, &split);
                s.spawn(move || run_method(sorted, split, m, config, hp))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    let results = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { split, results, skipped })
}

fn run_method<T: Real>(
    windows: &[WindowRecord<T>],
    split: &Split,
    method: Method,
    config: FeatureConfig,
    hp: &Hyperparams,
) -> Result<MethodResult<T>> {
    let matrix = FeatureExtractor::new(config).assemble(windows, method)?;
    let train_m = standardize(&matrix.select(split.train.clone()), None)?;
    let model = train(&train_m, hp)?;
    let test_m = matrix.select(split.test.clone());
    let pred = model.predict_matrix(&test_m)?;
    let truth: Vec<Label> = test_m.labels.iter().map(|l| l.expect("checked above")).collect();
    let counts = ConfusionCounts::from_labels(&truth, &pred)?;
    let metrics = metrics(&counts)?;
    Ok(MethodResult { method, counts, metrics, model })
}

fn fmt_pct<T: Real>(v: &Option<T>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.4}", x.to_f64_lossy()))
}

/// `method,accuracy_pct,precision_pct,recall_pct`; undefined metrics are
/// written as `undefined`.
pub fn write_metrics_csv<T: Real, W: Write>(rows: &[(Method, MetricsReport<T>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "accuracy_pct", "precision_pct", "recall_pct"])?;
    for (m, r) in rows {
        w.write_record([m.to_string(), fmt_pct(&Some(r.accuracy)), fmt_pct(&r.precision), fmt_pct(&r.recall)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flag {
    FalsePositive,
    FalseNegative,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::FalsePositive => "FP",
            Flag::FalseNegative => "FN",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimelineRow {
    /// Hours since the first window.
    pub hour: i64,
    pub load_kwh: f64,
    pub truth: Label,
    pub pred: Label,
    pub flag: Option<Flag>,
}

/// One row per window with the window's aggregate energy and any FP/FN flag.
pub fn timeline(truth: &LabelSeries, pred: &LabelSeries, load: &LoadTable) -> Result<Vec<TimelineRow>> {
    if truth.window_starts != pred.window_starts {
        return Err(Error::TimestampMismatch);
    }
    let Some(&first) = truth.window_starts.first() else {
        return Ok(Vec::new());
    };
    let agg = load.aggregate();
    truth
        .iter()
        .zip(&pred.labels)
        .map(|((start, t), &p)| {
            let offset = (start - load.start()).num_seconds();
            if offset < 0 || offset % 60 != 0 {
                return Err(Error::TimestampMismatch);
            }
            let row = (offset / 60) as usize;
            if row + WINDOW_LEN > agg.len() {
                return Err(Error::TimestampMismatch);
            }
            let load_kwh = agg[row..row + WINDOW_LEN].iter().sum::<f64>() / 60.0;
            let flag = match (t, p) {
                (Label::Inactive, Label::Active) => Some(Flag::FalsePositive),
                (Label::Active, Label::Inactive) => Some(Flag::FalseNegative),
                _ => None,
            };
            let hour = (start - first).num_seconds() / Duration::hours(1).num_seconds();
            Ok(TimelineRow { hour, load_kwh, truth: t, pred: p, flag })
        })
        .collect()
}

/// `hour,load_kwh,truth,pred,flag`.
pub fn write_timeline_csv<W: Write>(rows: &[TimelineRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["hour", "load_kwh", "truth", "pred", "flag"])?;
    for r in rows {
        w.write_record([
            r.hour.to_string(),
            format!("{:.6}", r.load_kwh),
            r.truth.as_digit().to_string(),
            r.pred.as_digit().to_string(),
            r.flag.map(Flag::as_str).unwrap_or("").to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn series(labels: &[u8]) -> LabelSeries {
        let t0 = Utc.with_ymd_and_hms(2017, 8, 1, 0, 0, 0).unwrap();
        LabelSeries::new(
            "cooling",
            (0..labels.len()).map(|h| t0 + Duration::hours(h as i64)).collect(),
            labels.iter().map(|&b| Label::from_active(b == 1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes() {
        let s = split(100, SplitFractions::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let s = split(101, SplitFractions::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 16));
        assert_eq!(s.train.end, s.val.start);
        assert_eq!(s.val.end, s.test.start);
        assert_eq!(s.test.end, 101);
        assert!(matches!(split(9, SplitFractions::default()), Err(Error::TooFewWindows { .. })));
        let bad = SplitFractions { train: 0.7, val: 0.2, test: 0.2 };
        assert!(matches!(split(100, bad), Err(Error::InvalidFractions)));
    }

    proptest! {
        #[test]
        fn split_partitions_in_order(n in 10usize..5000, a in 0.05f64..0.9) {
            let rest = 1.0 - a;
            let f = SplitFractions { train: a, val: rest / 2.0, test: rest / 2.0 };
            let s = split(n, f).unwrap();
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.val.start);
            prop_assert_eq!(s.val.end, s.test.start);
            prop_assert_eq!(s.test.end, n);
        }
    }

    #[test]
    fn confusion_examples() {
        let truth = series(&[1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(confusion(&truth, &truth).unwrap(), ConfusionCounts { tp: 4, tn: 6, fp: 0, fn_: 0 });
        let truth = series(&[1, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        let none = series(&[0; 10]);
        assert_eq!(confusion(&truth, &none).unwrap(), ConfusionCounts { tp: 0, tn: 7, fp: 0, fn_: 3 });
        assert!(matches!(confusion(&truth, &series(&[0; 9])), Err(Error::TimestampMismatch)));
    }

    #[test]
    fn table_row_reproduces() {
        let c = ConfusionCounts { tp: 110, tn: 57, fp: 0, fn_: 1 };
        let m: MetricsReport<f64> = metrics(&c).unwrap();
        assert_eq!(format!("{:.2}", m.accuracy), "99.40");
        assert_eq!(format!("{:.2}", m.precision.unwrap()), "100.00");
        assert_eq!(format!("{:.2}", m.recall.unwrap()), "99.10");
        let exact: MetricsReport<Rational> = metrics(&c).unwrap();
        assert_eq!(exact.accuracy, Rational::new(100 * 167, 168));
    }

    #[test]
    fn metric_edge_cases() {
        let m: MetricsReport<f64> = metrics(&ConfusionCounts { tp: 1, tn: 1, fp: 1, fn_: 1 }).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (50.0, Some(50.0), Some(50.0)));
        let m: MetricsReport<f64> = metrics(&ConfusionCounts { tp: 0, tn: 8, fp: 0, fn_: 2 }).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (80.0, None, Some(0.0)));
        assert!(matches!(metrics::<f64>(&ConfusionCounts::default()), Err(Error::EmptyCounts)));
    }

    proptest! {
        #[test]
        fn accuracy_bounded_by_class_rates(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            let c = ConfusionCounts { tp, tn, fp, fn_ };
            prop_assume!(c.total() > 0);
            let m: MetricsReport<Rational> = metrics(&c).unwrap();
            let hundred = Rational::from_integer(100);
            prop_assert!(m.accuracy >= Rational::from_integer(0) && m.accuracy <= hundred);
            let tnr = percent::<Rational>(tn, tn + fp);
            let floor = [m.recall, tnr].into_iter().flatten().min();
            if let Some(floor) = floor {
                prop_assert!(m.accuracy >= floor);
            }
        }

        #[test]
        fn perfect_predictions_score_hundred(bits in proptest::collection::vec(0u8..2, 2..200)) {
            prop_assume!(bits.contains(&0) && bits.contains(&1));
            let s = series(&bits);
            let m: MetricsReport<f64> = metrics(&confusion(&s, &s).unwrap()).unwrap();
            prop_assert_eq!((m.accuracy, m.precision, m.recall), (100.0, Some(100.0), Some(100.0)));
        }

        #[test]
        fn accuracy_ignores_window_order(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..100), rot in 0usize..100) {
            let truth: Vec<Label> = pairs.iter().map(|p| Label::from_active(p.0 == 1)).collect();
            let pred: Vec<Label> = pairs.iter().map(|p| Label::from_active(p.1 == 1)).collect();
            let r = rot % truth.len();
            let (mut t2, mut p2) = (truth.clone(), pred.clone());
            t2.rotate_left(r);
            p2.rotate_left(r);
            let a = ConfusionCounts::from_labels(&truth, &pred).unwrap();
            let b = ConfusionCounts::from_labels(&t2, &p2).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn split_depends_on_order() {
        // Chronological: the test range is always the tail.
        let s = split(20, SplitFractions::default()).unwrap();
        assert_eq!(s.test, 17..20);
    }

    fn flat_load(hours: usize) -> LoadTable {
        let t0 = Utc.with_ymd_and_hms(2017, 8, 1, 0, 0, 0).unwrap();
        LoadTable::new("c", t0, vec!["x".into()], vec![vec![0.6; hours * 60]], None).unwrap()
    }

    #[test]
    fn timeline_flags() {
        let truth = series(&[1, 0, 1, 0]);
        let rows = timeline(&truth, &truth, &flat_load(4)).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.flag.is_none()));
        assert!((rows[0].load_kwh - 0.6).abs() < 1e-12);

        let pred = series(&[1, 0, 0, 0]);
        let rows = timeline(&truth, &pred, &flat_load(4)).unwrap();
        let flagged: Vec<_> = rows.iter().filter(|r| r.flag.is_some()).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!((flagged[0].hour, flagged[0].flag), (2, Some(Flag::FalseNegative)));

        let mut buf = Vec::new();
        write_timeline_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "hour,load_kwh,truth,pred,flag");
        assert_eq!(text.lines().nth(3).unwrap(), "2,0.600000,1,0,FN");
    }

    #[test]
    fn metrics_csv_marks_undefined() {
        let rows = vec![(
            Method::M1,
            MetricsReport { accuracy: 80.0, precision: None, recall: Some(0.0) },
        )];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "method,accuracy_pct,precision_pct,recall_pct\nM1,80.0000,undefined,0.0000\n");
    }
}
