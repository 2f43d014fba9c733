//! Behavioral models over detected activities: 24-hour occurrence profiles
//! and an onset-to-onset Markov transition matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use chrono::{NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LabelSeries;
use crate::scalar::Real;

const STATIONARY_TOL: f64 = 1e-10;
const STATIONARY_MAX_ITER: usize = 1_000_000;

/// Ordered activity names; the order fixes matrix indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ActivitySet(Vec<String>);

impl ActivitySet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::EmptyActivitySet);
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::DuplicateState(n.clone()));
            }
        }
        Ok(Self(names))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.0[i]
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }
}

impl TryFrom<Vec<String>> for ActivitySet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActivitySet> for Vec<String> {
    fn from(s: ActivitySet) -> Self {
        s.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HourlyProfile<T> {
    pub activity: String,
    /// Fraction of days with the activity active during each UTC hour.
    pub frequency: [T; 24],
    /// Days that contributed a window for each hour.
    pub days_observed: [usize; 24],
}

/// `frequency[h] = #days active at hour h / #days with a usable window at h`.
///
/// Requires at least one calendar day with all 24 windows present.
pub fn hourly_distribution<T: Real>(labels: &LabelSeries) -> Result<HourlyProfile<T>> {
    let mut days: BTreeMap<NaiveDate, [Option<bool>; 24]> = BTreeMap::new();
    for (t, l) in labels.iter() {
        days.entry(t.date_naive()).or_insert([None; 24])[t.hour() as usize] = Some(l.is_active());
    }
    if !days.values().any(|hours| hours.iter().all(Option::is_some)) {
        return Err(Error::NoCompleteDays);
    }
    let mut active = [0usize; 24];
    let mut observed = [0usize; 24];
    for hours in days.values() {
        for (h, slot) in hours.iter().enumerate() {
            if let Some(a) = slot {
                observed[h] += 1;
                active[h] += usize::from(*a);
            }
        }
    }
    let mut frequency = [T::zero(); 24];
    for h in 0..24 {
        if observed[h] > 0 {
            frequency[h] = T::from_usize_lossy(active[h]) / T::from_usize_lossy(observed[h]);
        }
    }
    Ok(HourlyProfile { activity: labels.activity.clone(), frequency, days_observed: observed })
}

/// `activity,hour,frequency`.
pub fn write_profile_csv<T: Real, W: Write>(profiles: &[HourlyProfile<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["activity", "hour", "frequency"])?;
    for p in profiles {
        for (h, f) in p.frequency.iter().enumerate() {
            w.write_record([p.activity.clone(), h.to_string(), format!("{:.6}", f.to_f64_lossy())])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Turns per-activity window labels into a sequence of activity onsets.
///
/// An onset is an inactive→active edge (the window before the first one is
/// taken as inactive). Simultaneous onsets are emitted in state order.
/// Series for activities outside `states` are ignored.
pub fn build_state_sequence(labels: &[LabelSeries], states: &ActivitySet) -> Result<Vec<usize>> {
    let mut tracked: Vec<(usize, &LabelSeries)> = Vec::new();
    for s in labels {
        if let Some(i) = states.index_of(&s.activity) {
            tracked.push((i, s));
        }
    }
    if tracked.is_empty() {
        return Ok(Vec::new());
    }
    let grid = &tracked[0].1.window_starts;
    if tracked.iter().any(|(_, s)| &s.window_starts != grid) {
        return Err(Error::GridMismatch);
    }
    tracked.sort_by_key(|(i, _)| *i);
    let mut prev = vec![false; tracked.len()];
    let mut seq = Vec::new();
    for w in 0..grid.len() {
        for (k, (state, s)) in tracked.iter().enumerate() {
            let now = s.labels[w].is_active();
            if now && !prev[k] {
                seq.push(*state);
            }
            prev[k] = now;
        }
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix<T> {
    pub states: ActivitySet,
    /// `counts[i][j]` = number of times state `j` directly followed `i`.
    pub counts: Vec<Vec<u64>>,
    pub p: Vec<Vec<T>>,
    pub smoothing: f64,
    /// Rows with no observations and no smoothing; left all-zero.
    pub zero_rows: Vec<bool>,
}

/// Maximum-likelihood (optionally additively smoothed) transition matrix:
/// `P[i][j] = (counts[i][j] + a) / (sum_j counts[i][j] + a K)`.
pub fn estimate_transition_matrix<T: Real>(seq: &[usize], states: &ActivitySet, smoothing: f64) -> Result<TransitionMatrix<T>> {
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(Error::InvalidSmoothing(smoothing));
    }
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort(seq.len()));
    }
    let k = states.len();
    if let Some(&bad) = seq.iter().find(|&&s| s >= k) {
        return Err(Error::UnknownState(bad.to_string()));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for w in seq.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let alpha = T::lit(smoothing);
    let mut p = vec![vec![T::zero(); k]; k];
    let mut zero_rows = vec![false; k];
    for i in 0..k {
        let row_total: u64 = counts[i].iter().sum();
        let denom = T::lit(row_total as f64) + alpha * T::from_usize_lossy(k);
        if denom == T::zero() {
            zero_rows[i] = true;
            continue;
        }
        for j in 0..k {
            p[i][j] = (T::lit(counts[i][j] as f64) + alpha) / denom;
        }
    }
    Ok(TransitionMatrix { states: states.clone(), counts, p, smoothing, zero_rows })
}

#[derive(Serialize, Deserialize)]
struct TransitionsFile {
    states: Vec<String>,
    counts: Vec<Vec<u64>>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    smoothing: f64,
}

impl<T: Real> TransitionMatrix<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.p[i].iter().copied().sum()
    }

    /// `{states, counts, P, smoothing}` as pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        let file = TransitionsFile {
            states: self.states.names().to_vec(),
            counts: self.counts.clone(),
            p: self.p.iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
            smoothing: self.smoothing,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TransitionsFile = serde_json::from_str(text)?;
        let states = ActivitySet::new(f.states)?;
        let k = states.len();
        if f.counts.len() != k || f.p.len() != k || f.counts.iter().any(|r| r.len() != k) || f.p.iter().any(|r| r.len() != k) {
            return Err(Error::GridMismatch);
        }
        let zero_rows = f.p.iter().map(|r| r.iter().all(|&v| v == 0.0)).collect();
        Ok(Self {
            states,
            counts: f.counts,
            p: f.p.into_iter().map(|r| r.into_iter().map(T::lit).collect()).collect(),
            smoothing: f.smoothing,
            zero_rows,
        })
    }
}

fn is_irreducible<T: Real>(p: &[Vec<T>]) -> bool {
    let k = p.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let edge = if forward { p[i][j] } else { p[j][i] };
                if edge > T::zero() && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Stationary distribution `pi = pi P` by power iteration on the lazy chain
/// `(I + P) / 2`, which has the same fixed point and is aperiodic.
pub fn stationary_distribution<T: Real>(tm: &TransitionMatrix<T>) -> Result<Vec<T>> {
    let k = tm.len();
    if let Some(i) = tm.zero_rows.iter().position(|&z| z) {
        return Err(Error::ZeroRow(i));
    }
    if !is_irreducible(&tm.p) {
        return Err(Error::ReducibleChain);
    }
    let half = T::lit(0.5);
    let mut pi = vec![T::one() / T::from_usize_lossy(k); k];
    let tol = T::lit(STATIONARY_TOL * 1e-2).max(T::epsilon() * T::lit(16.0));
    for _ in 0..STATIONARY_MAX_ITER {
        let mut next = vec![T::zero(); k];
        for i in 0..k {
            for j in 0..k {
                next[j] += pi[i] * tm.p[i][j];
            }
        }
        let total: T = next.iter().copied().sum();
        for (n, &old) in next.iter_mut().zip(&pi) {
            *n = half * (*n / total + old);
        }
        let delta = next.iter().zip(&pi).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
        pi = next;
        if delta < tol {
            break;
        }
    }
    let total: T = pi.iter().copied().sum();
    Ok(pi.into_iter().map(|v| v / total).collect())
}

/// Empirical hourly profile keyed by activity, for several label series.
pub fn hourly_distributions<T: Real>(labels: &[LabelSeries]) -> Result<Vec<HourlyProfile<T>>> {
    labels.iter().map(hourly_distribution).collect()
}

/// Label series restricted to the named activities, in `states` order.
pub fn select_series<'a>(labels: &'a [LabelSeries], states: &ActivitySet) -> Result<Vec<&'a LabelSeries>> {
    let by_name: HashMap<&str, &LabelSeries> = labels.iter().map(|s| (s.activity.as_str(), s)).collect();
    states
        .names()
        .iter()
        .map(|n| by_name.get(n.as_str()).copied().ok_or_else(|| Error::UnknownState(n.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;
    use chrono::{DateTime, Duration, TimeZone, Utc};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2017, 5, 1, 0, 0, 0).unwrap()
    }

    fn series(name: &str, bits: &[u8]) -> LabelSeries {
        LabelSeries::new(
            name,
            (0..bits.len()).map(|h| t0() + Duration::hours(h as i64)).collect(),
            bits.iter().map(|&b| Label::from_active(b == 1)).collect(),
        )
        .unwrap()
    }

    fn states(names: &[&str]) -> ActivitySet {
        ActivitySet::new(names.iter().copied()).unwrap()
    }

    #[test]
    fn activity_set_validation() {
        assert!(matches!(ActivitySet::new(Vec::<String>::new()), Err(Error::EmptyActivitySet)));
        assert!(matches!(ActivitySet::new(["a", "a"]), Err(Error::DuplicateState(_))));
    }

    #[test]
    fn evening_spike_profile() {
        let bits: Vec<u8> = (0..24 * 3).map(|h| u8::from(h % 24 == 18)).collect();
        let p: HourlyProfile<f64> = hourly_distribution(&series("cook", &bits)).unwrap();
        for h in 0..24 {
            assert_eq!(p.frequency[h], if h == 18 { 1.0 } else { 0.0 });
        }
        let never: HourlyProfile<f64> = hourly_distribution(&series("x", &[0; 48])).unwrap();
        assert!(never.frequency.iter().all(|&f| f == 0.0));
        assert!(matches!(hourly_distribution::<f64>(&series("x", &[0; 23])), Err(Error::NoCompleteDays)));
    }

    #[test]
    fn profile_ignores_day_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits: Vec<u8> = (0..24 * 10).map(|_| rng.gen_range(0..2)).collect();
        let s = series("a", &bits);
        // rotate whole days
        let mut rotated = bits[24 * 4..].to_vec();
        rotated.extend_from_slice(&bits[..24 * 4]);
        let a: HourlyProfile<f64> = hourly_distribution(&s).unwrap();
        let b: HourlyProfile<f64> = hourly_distribution(&series("a", &rotated)).unwrap();
        assert_eq!(a.frequency, b.frequency);
    }

    #[test]
    fn onset_sequence_examples() {
        let st = states(&["A", "B"]);
        let a = series("A", &[1, 0, 0, 0, 1]);
        let b = series("B", &[0, 0, 1, 0, 0]);
        assert_eq!(build_state_sequence(&[a, b], &st).unwrap(), vec![0, 1, 0]);

        let a = series("A", &[0, 1, 0]);
        let b = series("B", &[0, 1, 0]);
        assert_eq!(build_state_sequence(&[b, a], &st).unwrap(), vec![0, 1]);

        let a = series("A", &[1, 1, 1, 0]);
        assert_eq!(build_state_sequence(&[a], &st).unwrap(), vec![0]);

        let short = series("B", &[0, 1]);
        assert!(matches!(build_state_sequence(&[series("A", &[1, 0, 0]), short], &st), Err(Error::GridMismatch)));
    }

    proptest! {
        #[test]
        fn trailing_inactive_windows_do_not_change_sequence(
            a in proptest::collection::vec(0u8..2, 1..60),
            b_seed in 0u64..1000,
            pad in 1usize..30,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(b_seed);
            let b: Vec<u8> = (0..a.len()).map(|_| rng.gen_range(0..2)).collect();
            let st = states(&["A", "B"]);
            let base = build_state_sequence(&[series("A", &a), series("B", &b)], &st).unwrap();
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            a2.extend(std::iter::repeat_n(0, pad));
            b2.extend(std::iter::repeat_n(0, pad));
            let padded = build_state_sequence(&[series("A", &a2), series("B", &b2)], &st).unwrap();
            prop_assert_eq!(base, padded);
        }

        #[test]
        fn smoothed_rows_are_stochastic(seq in proptest::collection::vec(0usize..4, 2..200), alpha in 0.01f64..5.0) {
            let tm: TransitionMatrix<f64> = estimate_transition_matrix(&seq, &states(&["a", "b", "c", "d"]), alpha).unwrap();
            for i in 0..4 {
                prop_assert!((tm.row_sum(i) - 1.0).abs() < 1e-12);
            }
            let total: u64 = tm.counts.iter().flatten().sum();
            prop_assert_eq!(total as usize, seq.len() - 1);
        }
    }

    #[test]
    fn alternating_chain() {
        let tm: TransitionMatrix<f64> = estimate_transition_matrix(&[0, 1, 0, 1, 0], &states(&["A", "B"]), 0.0).unwrap();
        assert_eq!(tm.p, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(estimate_transition_matrix::<f64>(&[0], &states(&["A"]), 0.0), Err(Error::SequenceTooShort(1))));
        assert!(estimate_transition_matrix::<f64>(&[0, 1], &states(&["A", "B"]), -1.0).is_err());
    }

    #[test]
    fn unobserved_row_is_flagged() {
        let tm: TransitionMatrix<f64> = estimate_transition_matrix(&[0, 1, 1], &states(&["A", "B", "C"]), 0.0).unwrap();
        assert_eq!(tm.zero_rows, vec![false, false, true]);
        assert!(tm.p[2].iter().all(|&v| v == 0.0));
        assert!(matches!(stationary_distribution(&tm), Err(Error::ZeroRow(2))));
    }

    #[test]
    fn exact_fraction_rows() {
        let st = states(&["Sleeping", "Grooming", "Food-Preparing", "Dish-Washing", "Doing Laundry"]);
        let (s, g, f, d) = (0, 1, 2, 3);
        let seq = [d, d, d, d, s, f, d, s, f, d, s, f, d, s, f, s, f, s, g];
        let tm: TransitionMatrix<f64> = estimate_transition_matrix(&seq, &st, 0.0).unwrap();
        assert_eq!(tm.counts[s], vec![0, 1, 5, 0, 0]);
        assert_eq!(tm.counts[d], vec![4, 0, 0, 3, 0]);
        let expect_s = [0.0, 1.0 / 6.0, 5.0 / 6.0, 0.0, 0.0];
        let expect_d = [4.0 / 7.0, 0.0, 0.0, 3.0 / 7.0, 0.0];
        for j in 0..5 {
            assert!((tm.p[s][j] - expect_s[j]).abs() < 1e-15);
            assert!((tm.p[d][j] - expect_d[j]).abs() < 1e-15);
        }
        assert!(tm.zero_rows[g] && tm.zero_rows[4]);
        assert!((tm.row_sum(f) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_examples() {
        let st = states(&["A", "B"]);
        let swap = estimate_transition_matrix::<f64>(&[0, 1, 0, 1], &st, 0.0).unwrap();
        let pi = stationary_distribution(&swap).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-10 && (pi[1] - 0.5).abs() < 1e-10);

        let ident = estimate_transition_matrix::<f64>(&[0, 0, 1, 1], &st, 0.0).unwrap();
        // 0->0, 0->1, 1->1: state 1 never returns to 0
        assert!(matches!(stationary_distribution(&ident), Err(Error::ReducibleChain)));

        let mut eye = ident.clone();
        eye.p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(stationary_distribution(&eye), Err(Error::ReducibleChain)));
    }

    #[test]
    fn transitions_json_layout() {
        let tm: TransitionMatrix<f64> = estimate_transition_matrix(&[0, 1, 0], &states(&["A", "B"]), 0.0).unwrap();
        let text = tm.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["states"], serde_json::json!(["A", "B"]));
        assert_eq!(v["P"], serde_json::json!([[0.0, 1.0], [1.0, 0.0]]));
        assert_eq!(v["counts"], serde_json::json!([[0, 1], [1, 0]]));
        assert_eq!(v["smoothing"], serde_json::json!(0.0));
        assert_eq!(TransitionMatrix::<f64>::from_json(&text).unwrap(), tm);
    }
}
