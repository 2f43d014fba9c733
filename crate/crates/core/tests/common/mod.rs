//! Reference implementations used only by tests. Each one is written from
//! the defining formula, independently of the library code it checks.
#![allow(dead_code)]

use activity_disagg::eval::ConfusionCounts;
use activity_disagg::ingest::Label;
use activity_disagg::Rational;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `|X_k|` for `k < bins`, by the O(N^2) definition
/// `X_k = sum_n x_n exp(-2 pi i k n / N)`.
pub fn naive_dft_amplitudes(x: &[f64], bins: usize) -> Vec<f64> {
    let n = x.len();
    (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in x.iter().enumerate() {
                // reduce k*t mod N first so the angle stays small and exact
                let phase = 2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * phase.cos();
                im -= v * phase.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Accuracy, precision and recall in percent, as exact fractions.
pub struct RationalMetrics {
    pub accuracy: Rational,
    pub precision: Option<Rational>,
    pub recall: Option<Rational>,
}

pub fn rational_metrics(c: &ConfusionCounts) -> RationalMetrics {
    let r = |n: u64, d: u64| Rational::new(100 * i128::from(n), i128::from(d));
    let total = c.tp + c.tn + c.fp + c.fn_;
    RationalMetrics {
        accuracy: r(c.tp + c.tn, total),
        precision: (c.tp + c.fp > 0).then(|| r(c.tp, c.tp + c.fp)),
        recall: (c.tp + c.fn_ > 0).then(|| r(c.tp, c.tp + c.fn_)),
    }
}

/// Counts by direct enumeration of the four cases.
pub fn tally(truth: &[Label], pred: &[Label]) -> ConfusionCounts {
    let count = |t: Label, p: Label| truth.iter().zip(pred).filter(|&(&a, &b)| a == t && b == p).count() as u64;
    ConfusionCounts {
        tp: count(Label::Active, Label::Active),
        tn: count(Label::Inactive, Label::Inactive),
        fp: count(Label::Inactive, Label::Active),
        fn_: count(Label::Active, Label::Inactive),
    }
}

/// `1/2 |w|^2 + sum_i C_i max(0, 1 - y_i (w.x_i + b))`.
pub fn svm_primal(rows: &[Vec<f64>], y: &[i8], c: &[f64], w: &[f64], b: f64) -> f64 {
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = rows
        .iter()
        .zip(y)
        .zip(c)
        .map(|((x, &yi), &ci)| {
            let s: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            ci * (1.0 - f64::from(yi) * s).max(0.0)
        })
        .sum();
    reg + hinge
}

/// Result of the reference solver.
pub struct OracleSolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub primal: f64,
    /// Primal minus dual objective; an upper bound on suboptimality.
    pub gap: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Coordinate ascent on the dual
/// `max sum_i a_i - 1/2 |sum_i a_i y_i x_i|^2`, `0 <= a_i <= C_i`,
/// `sum_i a_i y_i = 0`.
///
/// Each step moves one pair along `a_i += y_i t`, `a_j -= y_j t`, which keeps
/// the equality constraint. With `G_k = y_k - w.x_k` the dual slope along the
/// pair is `G_i - G_j`; the pair with the largest feasible slope is chosen
/// and the step is the exact maximizer clipped to the box. The bias is then
/// found by evaluating the primal at every hinge breakpoint `b = G_k`, since
/// for fixed `w` the primal is convex and piecewise linear in `b`.
pub fn svm_oracle(rows: &[Vec<f64>], y: &[i8], c: &[f64]) -> OracleSolution {
    let n = rows.len();
    let d = rows[0].len();
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    for _ in 0..2_000_000 {
        let g: Vec<f64> = (0..n).map(|k| yf[k] - dot(&w, &rows[k])).collect();
        // room to move a_k by +y_k t (up) or -y_k t (down) for t > 0
        let up = |k: usize| if yf[k] > 0.0 { c[k] - alpha[k] } else { alpha[k] };
        let down = |k: usize| if yf[k] > 0.0 { alpha[k] } else { c[k] - alpha[k] };
        let i = (0..n).filter(|&k| up(k) > 0.0).max_by(|&a, &b| g[a].total_cmp(&g[b]));
        let j = (0..n).filter(|&k| down(k) > 0.0).min_by(|&a, &b| g[a].total_cmp(&g[b]));
        let (Some(i), Some(j)) = (i, j) else { break };
        let slope = g[i] - g[j];
        if slope < 1e-13 {
            break;
        }
        let diff: Vec<f64> = rows[i].iter().zip(&rows[j]).map(|(a, b)| a - b).collect();
        let curv = dot(&diff, &diff);
        let limit = up(i).min(down(j));
        let t = if curv > 0.0 { (slope / curv).min(limit) } else { limit };
        alpha[i] += yf[i] * t;
        alpha[j] -= yf[j] * t;
        for k in 0..d {
            w[k] += t * diff[k];
        }
    }
    let candidates: Vec<f64> = (0..n).map(|k| yf[k] - dot(&w, &rows[k])).collect();
    let (b, primal) = candidates
        .iter()
        .map(|&b| (b, svm_primal(rows, y, c, &w, b)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    let dual = alpha.iter().sum::<f64>() - 0.5 * dot(&w, &w);
    OracleSolution { w, b, primal, gap: primal - dual }
}

/// Random non-separable instance: Gaussian features, labels from a noisy
/// linear rule with both classes present.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize, flip: f64) -> (Vec<Vec<f64>>, Vec<i8>) {
    loop {
        let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let offset = rng.gen_range(-0.5..0.5);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
            let s: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + offset;
            let mut label = if s > 0.0 { 1 } else { -1 };
            if rng.gen::<f64>() < flip {
                label = -label;
            }
            rows.push(x);
            y.push(label);
        }
        if y.iter().any(|&v| v > 0) && y.iter().any(|&v| v < 0) {
            return (rows, y);
        }
    }
}

/// Linearly separable instance with margin at least `gap` around a random
/// hyperplane.
pub fn separable_instance(rng: &mut ChaCha8Rng, n: usize, d: usize, gap: f64) -> (Vec<Vec<f64>>, Vec<i8>) {
    let normal: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
    let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    while rows.len() < n {
        let x: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let s = x.iter().zip(&normal).map(|(a, b)| a * b).sum::<f64>() / norm;
        if s.abs() < gap {
            continue;
        }
        // keep both classes represented
        if rows.len() + 1 == n && y.iter().all(|&v| v == if s > 0.0 { 1 } else { -1 }) {
            continue;
        }
        y.push(if s > 0.0 { 1 } else { -1 });
        rows.push(x);
    }
    (rows, y)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Runs every pipeline command on `config` inside `dir` and returns the
/// data files written, in a fixed order.
pub fn full_run(config: &activity_disagg::synth::SynthConfig, dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    use activity_disagg::features::Method;
    use activity_disagg::pipeline::{self, DataSource, ModelOptions, TrainOptions, WindowOptions};

    let data = dir.join("data");
    let mut files = pipeline::simulate(config, &data).unwrap().1;
    let src = DataSource::new(data.join("load.csv")).with_weather(data.join("weather.csv"));
    let opts = TrainOptions { methods: Method::ALL.to_vec(), ..TrainOptions::default() };
    files.extend(pipeline::train(&src, &opts, &dir.join("train")).unwrap().1);
    let model = dir.join("train").join("model_m4.json");
    let w = WindowOptions::default();
    files.extend(pipeline::detect(&model, &src, &w, &dir.join("detect")).unwrap().1);
    files.extend(pipeline::evaluate(&model, &src, &w, &dir.join("evaluate")).unwrap().2);
    let labels = vec![data.join("labels.csv")];
    files.extend(pipeline::model(&labels, &ModelOptions::default(), &dir.join("model")).unwrap().2);
    let detections = vec![dir.join("detect").join("detections.csv")];
    files.extend(pipeline::model(&detections, &ModelOptions::default(), &dir.join("model_detected")).unwrap().2);
    for f in [
        dir.join("train").join("metrics.csv"),
        dir.join("detect").join("timeline.csv"),
        dir.join("model").join("profile.csv"),
        dir.join("model").join("transitions.json"),
    ] {
        files.push(pipeline::plot_data(&f, &dir.join("plot")).unwrap().1);
    }
    files
}
