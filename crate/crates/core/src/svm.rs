//! Soft-margin linear SVM trained by sequential minimal optimization.
//!
//! The solver works on the dual
//!
//! ```text
//! min_a  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C_i,  y'a = 0,   Q_ij = y_i y_j <x_i, x_j>
//! ```
//!
//! using second-order working-set selection. The weight vector is kept
//! explicitly, so memory stays linear in the sample count. After the dual
//! converges the bias is set by an exact one-dimensional minimization of the
//! primal hinge term, which makes the reported primal objective the best
//! attainable for the learned weights.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureMatrix, Method, Scaler};
use crate::ingest::Label;
use crate::scalar::Real;

pub const MODEL_VERSION: u64 = 1;

const TAU: f64 = 1e-12;
const CHECKPOINT_EVERY: usize = 100;
/// Required `(primal - dual) / primal` at termination.
const GAP_REL_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Soft-margin penalty.
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation. Training also
    /// waits for a relative duality gap below 1e-4.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Scale the penalty per class by inverse class frequency.
    #[serde(default)]
    pub class_weighted: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { c: 1.0, tol: 1e-4, max_iter: 100_000, seed: 42, class_weighted: false }
    }
}

impl Hyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidHyperparameter(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidHyperparameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidHyperparameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-class penalties `(C+, C-)`.
    pub fn class_penalties(&self, n_pos: usize, n_neg: usize) -> (f64, f64) {
        if !self.class_weighted || n_pos == 0 || n_neg == 0 {
            return (self.c, self.c);
        }
        let n = (n_pos + n_neg) as f64;
        (self.c * n / (2.0 * n_pos as f64), self.c * n / (2.0 * n_neg as f64))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    /// Maximal KKT violation at exit.
    pub kkt_violation: f64,
    pub tol: f64,
    pub converged: bool,
    pub seed: u64,
    pub class_penalties: [f64; 2],
    /// Dual objective `1/2 a'Qa - e'a` every 100 iterations; non-increasing.
    #[serde(default)]
    pub objective_trace: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub features: FeatureConfig,
}

/// Raw solver output on already-scaled rows.
#[derive(Clone, Debug)]
pub struct LinearSolution<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub alpha: Vec<T>,
    pub meta: TrainMeta,
}

/// `1/2 |w|^2 + sum_i C_i max(0, 1 - y_i (w.x_i + b))`.
pub fn primal_objective<T: Real>(rows: &[Vec<T>], y: &[i8], penalties: (f64, f64), weights: &[T], bias: T) -> T {
    let reg = weights.iter().map(|&w| w * w).sum::<T>() * T::lit(0.5);
    let hinge: T = rows
        .iter()
        .zip(y)
        .map(|(x, &yi)| {
            let yf = T::lit(f64::from(yi));
            let margin = yf * (dot(weights, x) + bias);
            penalty::<T>(penalties, yi) * (T::one() - margin).max(T::zero())
        })
        .sum();
    reg + hinge
}

fn penalty<T: Real>(penalties: (f64, f64), yi: i8) -> T {
    T::lit(if yi > 0 { penalties.0 } else { penalties.1 })
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&p, &q)| p * q).sum()
}

/// Bias minimizing the hinge term for fixed margins `m_i = w.x_i`; among
/// minimizers the one closest to `hint`.
fn optimal_bias<T: Real>(margins: &[T], y: &[i8], penalties: (f64, f64), hint: T) -> T {
    // Term i is active for b < y_i - m_i (positive) or b > y_i - m_i
    // (negative). The slope starts at -sum(C+) and each breakpoint adds C_i.
    let mut breaks: Vec<(T, T)> = margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| (T::lit(f64::from(yi)) - m, penalty(penalties, yi)))
        .collect();
    breaks.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite margins"));
    let mut slope: T = -y.iter().filter(|&&v| v > 0).map(|_| T::lit(penalties.0)).sum::<T>();
    let eps = T::lit(1e-12) * (T::one() + slope.abs());
    let mut lo = T::neg_infinity();
    let mut hi = T::infinity();
    for &(b, c) in &breaks {
        if slope < -eps {
            lo = b;
        }
        slope += c;
        if slope > eps {
            hi = b;
            break;
        }
    }
    if lo > hi {
        lo = hi;
    }
    hint.max(lo).min(hi)
}

struct Smo<'a, T: Real> {
    rows: &'a [Vec<T>],
    y: &'a [i8],
    cap: Vec<T>,
    diag: Vec<T>,
    alpha: Vec<T>,
    grad: Vec<T>,
    w: Vec<T>,
}

impl<'a, T: Real> Smo<'a, T> {
    fn new(rows: &'a [Vec<T>], y: &'a [i8], penalties: (f64, f64)) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        Self {
            rows,
            y,
            cap: y.iter().map(|&v| penalty(penalties, v)).collect(),
            diag: rows.iter().map(|x| dot(x, x)).collect(),
            alpha: vec![T::zero(); n],
            grad: vec![-T::one(); n],
            w: vec![T::zero(); d],
        }
    }

    fn yf(&self, i: usize) -> T {
        T::lit(f64::from(self.y[i]))
    }

    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0 {
            self.alpha[t] < self.cap[t]
        } else {
            self.alpha[t] > T::zero()
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0 {
            self.alpha[t] > T::zero()
        } else {
            self.alpha[t] < self.cap[t]
        }
    }

    fn kernel_column(&self, i: usize) -> Vec<T> {
        let xi = &self.rows[i];
        self.rows.iter().map(|x| dot(xi, x)).collect()
    }

    /// `1/2 a'Qa - e'a`, using `w = sum a_i y_i x_i`.
    fn dual_value(&self) -> T {
        T::lit(0.5) * dot(&self.w, &self.w) - self.alpha.iter().copied().sum::<T>()
    }

    /// One SMO step. Returns the KKT violation measured before the step, or
    /// `None` when no violating pair exists.
    fn step(&mut self, tol: T) -> Option<T> {
        let n = self.alpha.len();
        let mut gmax = T::neg_infinity();
        let mut i = usize::MAX;
        for t in 0..n {
            if self.in_up(t) {
                let v = -self.yf(t) * self.grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = T::infinity();
        for t in 0..n {
            if self.in_low(t) {
                gmin = gmin.min(-self.yf(t) * self.grad[t]);
            }
        }
        if i == usize::MAX || gmin == T::infinity() {
            return None;
        }
        let violation = gmax - gmin;
        if violation < tol {
            return Some(violation);
        }

        let ki = self.kernel_column(i);
        let mut j = usize::MAX;
        let mut best = T::infinity();
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let b = gmax + self.yf(t) * self.grad[t];
            if b <= T::zero() {
                continue;
            }
            let mut a = self.diag[i] + self.diag[t] - T::lit(2.0) * ki[t];
            if a <= T::zero() {
                a = T::lit(TAU);
            }
            let score = -(b * b) / a;
            if score < best {
                best = score;
                j = t;
            }
        }
        if j == usize::MAX {
            return Some(violation);
        }
        let kj = self.kernel_column(j);
        self.update_pair(i, j, &ki, &kj);
        Some(violation)
    }

    fn update_pair(&mut self, i: usize, j: usize, ki: &[T], kj: &[T]) {
        let (ci, cj) = (self.cap[i], self.cap[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let zero = T::zero();
        let mut quad = self.diag[i] + self.diag[j] - T::lit(2.0) * ki[j];
        if quad <= zero {
            quad = T::lit(TAU);
        }
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > zero {
                if aj < zero {
                    aj = zero;
                    ai = diff;
                }
            } else if ai < zero {
                ai = zero;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < zero {
                aj = zero;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < zero {
                ai = zero;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        let (yi, yj) = (self.yf(i), self.yf(j));
        for (t, g) in self.grad.iter_mut().enumerate() {
            let yt = T::lit(f64::from(self.y[t]));
            *g += yt * (yi * ki[t] * di + yj * kj[t] * dj);
        }
        let (xi, xj) = (&self.rows[i], &self.rows[j]);
        for (k, wk) in self.w.iter_mut().enumerate() {
            *wk += yi * di * xi[k] + yj * dj * xj[k];
        }
    }

    /// `(primal - dual) / primal` at the current iterate, with the primal
    /// evaluated at its best bias for the current `w`.
    fn relative_gap(&self, penalties: (f64, f64)) -> T {
        let margins: Vec<T> = self.rows.iter().map(|x| dot(&self.w, x)).collect();
        let bias = optimal_bias(&margins, self.y, penalties, self.kkt_bias());
        let primal = primal_objective(self.rows, self.y, penalties, &self.w, bias);
        (primal + self.dual_value()) / primal.max(T::min_positive_value())
    }

    /// Bias estimate from the KKT conditions (average over free vectors).
    fn kkt_bias(&self) -> T {
        let mut sum = T::zero();
        let mut count = 0usize;
        let mut ub = T::infinity();
        let mut lb = T::neg_infinity();
        for t in 0..self.alpha.len() {
            let yg = self.yf(t) * self.grad[t];
            let at_upper = self.alpha[t] >= self.cap[t];
            let at_lower = self.alpha[t] <= T::zero();
            if at_upper {
                if self.y[t] < 0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if at_lower {
                if self.y[t] > 0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                sum += yg;
                count += 1;
            }
        }
        let rho = if count > 0 {
            sum / T::from_usize_lossy(count)
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) * T::lit(0.5)
        } else {
            T::zero()
        };
        -rho
    }
}

/// Trains on already-scaled rows with labels in `{-1, +1}`.
///
/// With a single class present the result is the constant classifier
/// predicting that class, and a warning is recorded.
pub fn fit_linear<T: Real>(rows: &[Vec<T>], y: &[i8], hp: &Hyperparams) -> Result<LinearSolution<T>> {
    hp.validate()?;
    if rows.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: rows.len(), got: y.len() });
    }
    if rows.len() < 2 {
        return Err(Error::TooFewSamples(rows.len()));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::InvalidHyperparameter("labels must be +1 or -1".into()));
    }
    let n_pos = y.iter().filter(|&&v| v > 0).count();
    let n_neg = y.len() - n_pos;
    let penalties = hp.class_penalties(n_pos, n_neg);
    let mut meta = TrainMeta {
        tol: hp.tol,
        seed: hp.seed,
        class_penalties: [penalties.0, penalties.1],
        ..TrainMeta::default()
    };

    if n_pos == 0 || n_neg == 0 {
        let sign = if n_pos > 0 { 1.0 } else { -1.0 };
        let msg = format!("single-class training set; constant {} predictor", if n_pos > 0 { "active" } else { "inactive" });
        warn!("{msg}");
        meta.warnings.push(msg);
        meta.converged = true;
        let weights = vec![T::zero(); d];
        let bias = T::lit(sign);
        meta.primal_objective = primal_objective(rows, y, penalties, &weights, bias).to_f64_lossy();
        return Ok(LinearSolution { weights, bias, alpha: vec![T::zero(); rows.len()], meta });
    }

    let mut smo = Smo::new(rows, y, penalties);
    let tol = T::lit(hp.tol);
    let floor = T::lit(TAU);
    let gap_tol = T::lit(GAP_REL_TOL).max(T::epsilon() * T::lit(1e3));
    let mut iterations = 0;
    let mut violation = T::infinity();
    let mut converged = false;
    let mut next_gap_check = 0;
    while iterations < hp.max_iter {
        if iterations % CHECKPOINT_EVERY == 0 {
            meta.objective_trace.push(smo.dual_value().to_f64_lossy());
        }
        match smo.step(floor) {
            Some(v) if v >= floor => {
                violation = v;
                iterations += 1;
                // a small KKT violation alone does not bound the objective
                // error, so also require a small duality gap
                if v < tol && iterations >= next_gap_check {
                    if smo.relative_gap(penalties) <= gap_tol {
                        converged = true;
                        break;
                    }
                    next_gap_check = iterations + CHECKPOINT_EVERY;
                }
            }
            Some(v) => {
                violation = v;
                converged = true;
                break;
            }
            None => {
                violation = T::zero();
                converged = true;
                break;
            }
        }
    }
    if !converged {
        let msg = format!("SMO stopped at max_iter={} with KKT violation {}", hp.max_iter, violation);
        warn!("{msg}");
        meta.warnings.push(msg);
    }
    meta.objective_trace.push(smo.dual_value().to_f64_lossy());

    let margins: Vec<T> = rows.iter().map(|x| dot(&smo.w, x)).collect();
    let bias = optimal_bias(&margins, y, penalties, smo.kkt_bias());
    let primal = primal_objective(rows, y, penalties, &smo.w, bias).to_f64_lossy();
    let dual = -smo.dual_value().to_f64_lossy();
    meta.iterations = iterations;
    meta.primal_objective = primal;
    meta.dual_objective = dual;
    meta.duality_gap = primal - dual;
    meta.kkt_violation = violation.to_f64_lossy();
    meta.converged = converged;
    Ok(LinearSolution { weights: smo.w, bias, alpha: smo.alpha, meta })
}

/// Trained linear classifier together with the scaler of its training split.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub c: T,
    pub scaler: Scaler<T>,
    pub columns: Vec<String>,
    pub meta: TrainMeta,
}

/// Trains on a standardized feature matrix whose rows all carry labels.
pub fn train<T: Real>(matrix: &FeatureMatrix<T>, hp: &Hyperparams) -> Result<SvmModel<T>> {
    let scaler = matrix.scaler.clone().ok_or(Error::NotStandardized)?;
    let y = matrix
        .labels
        .iter()
        .zip(&matrix.starts)
        .map(|(l, t)| l.map(Label::sign).ok_or_else(|| Error::UnlabeledWindow(t.to_rfc3339())))
        .collect::<Result<Vec<i8>>>()?;
    let sol = fit_linear(&matrix.rows, &y, hp)?;
    let mut meta = sol.meta;
    meta.method = Some(matrix.method);
    meta.features = matrix.config;
    Ok(SvmModel {
        weights: sol.weights,
        bias: sol.bias,
        c: T::lit(hp.c),
        scaler,
        columns: matrix.columns.clone(),
        meta,
    })
}

impl<T: Real> SvmModel<T> {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w . x + b` for an already-standardized row.
    pub fn decision_value_scaled(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// `w . scale(x) + b` for a raw feature row in training column layout.
    pub fn decision_value(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        self.decision_value_scaled(&self.scaler.transform(x)?)
    }

    /// Active iff the decision value is strictly positive.
    pub fn predict(&self, x: &[T]) -> Result<Label> {
        Ok(label_of(self.decision_value(x)?))
    }

    /// Predictions for every row of a raw (unstandardized) matrix.
    pub fn predict_matrix(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<Label>> {
        if matrix.is_standardized() {
            matrix.rows.iter().map(|r| self.decision_value_scaled(r).map(label_of)).collect()
        } else {
            matrix.rows.iter().map(|r| self.predict(r)).collect()
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let file = ModelFile {
            version: MODEL_VERSION,
            weights: f(&self.weights),
            bias: self.bias.to_f64_lossy(),
            c: self.c.to_f64_lossy(),
            scaler: ScalerFile { mean: f(&self.scaler.mean), std: f(&self.scaler.std) },
            columns: self.columns.clone(),
            train_meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedModelFile(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::MalformedModelFile("missing integer `version`".into()))?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: MODEL_VERSION });
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::MalformedModelFile(e.to_string()))?;
        let d = file.weights.len();
        if file.scaler.mean.len() != d || file.scaler.std.len() != d || file.columns.len() != d {
            return Err(Error::MalformedModelFile("weights, scaler and columns differ in length".into()));
        }
        if file.c.is_nan() || file.c <= 0.0 {
            return Err(Error::MalformedModelFile("C must be positive".into()));
        }
        let conv = |v: Vec<f64>| -> Result<Vec<T>> {
            v.into_iter()
                .map(|x| T::from_f64(x).ok_or_else(|| Error::MalformedModelFile(format!("bad number {x}"))))
                .collect()
        };
        Ok(Self {
            weights: conv(file.weights)?,
            bias: T::lit(file.bias),
            c: T::lit(file.c),
            scaler: Scaler { mean: conv(file.scaler.mean)?, std: conv(file.scaler.std)? },
            columns: file.columns,
            meta: file.train_meta,
        })
    }
}

fn label_of<T: Real>(decision: T) -> Label {
    Label::from_active(decision > T::zero())
}

#[derive(Serialize, Deserialize)]
struct ScalerFile {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    weights: Vec<f64>,
    bias: f64,
    #[serde(rename = "C")]
    c: f64,
    scaler: ScalerFile,
    columns: Vec<String>,
    train_meta: TrainMeta,
}
