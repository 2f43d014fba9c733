mod common;

use activity_disagg::svm::{fit_linear, Hyperparams};
use common::{random_instance, separable_instance, svm_oracle, svm_primal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hp(c: f64) -> Hyperparams {
    Hyperparams { c, ..Hyperparams::default() }
}

#[test]
fn matches_reference_solver_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..12 {
        let n = rng.gen_range(10..=100);
        let d = rng.gen_range(1..=16);
        let c = [0.1, 1.0, 10.0][case % 3];
        let (rows, y) = random_instance(&mut rng, n, d, 0.1);
        let sol = fit_linear(&rows, &y, &hp(c)).unwrap();
        let oracle = svm_oracle(&rows, &y, &vec![c; n]);
        let ours = svm_primal(&rows, &y, &vec![c; n], &sol.weights, sol.bias);
        assert!(oracle.gap < 1e-6, "case {case}: oracle gap {}", oracle.gap);
        let rel = (ours - oracle.primal) / oracle.primal.abs().max(1e-12);
        assert!(rel.abs() < 1e-3, "case {case}: n={n} d={d} C={c} ours={ours} oracle={}", oracle.primal);
        assert!((sol.meta.primal_objective - ours).abs() < 1e-9 * ours.max(1.0));
    }
}

#[test]
fn free_support_vectors_sit_on_the_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (rows, y) = random_instance(&mut rng, 60, 3, 0.05);
    let c = 1.0;
    let h = Hyperparams { c, tol: 1e-7, ..Hyperparams::default() };
    let sol = fit_linear(&rows, &y, &h).unwrap();
    let mut free = 0;
    for ((x, &yi), &a) in rows.iter().zip(&y).zip(&sol.alpha) {
        if a > 1e-6 && a < c - 1e-6 {
            let f: f64 = x.iter().zip(&sol.weights).map(|(p, q)| p * q).sum::<f64>() + sol.bias;
            assert!((f64::from(yi) * f - 1.0).abs() < 1e-3, "y f = {}", f64::from(yi) * f);
            free += 1;
        }
    }
    assert!(free > 0);
}

#[test]
fn predictions_agree_with_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, y) = random_instance(&mut rng, 40, 4, 0.1);
    let sol = fit_linear(&rows, &y, &hp(1.0)).unwrap();
    let oracle = svm_oracle(&rows, &y, &[1.0; 40]);
    let decide = |w: &[f64], b: f64, x: &[f64]| x.iter().zip(w).map(|(p, q)| p * q).sum::<f64>() + b > 0.0;
    let (test, _) = random_instance(&mut rng, 200, 4, 0.0);
    let agree = test
        .iter()
        .filter(|x| decide(&sol.weights, sol.bias, x) == decide(&oracle.w, oracle.b, x))
        .count();
    assert!(agree >= 196, "{agree}/200");
}

#[test]
fn separable_large_c_fits_training_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let (rows, y) = separable_instance(&mut rng, 80, 5, 0.1);
        let sol = fit_linear(&rows, &y, &hp(1e4)).unwrap();
        for (x, &yi) in rows.iter().zip(&y) {
            let f: f64 = x.iter().zip(&sol.weights).map(|(p, q)| p * q).sum::<f64>() + sol.bias;
            assert!(f64::from(yi) * f > 0.0);
        }
    }
}

#[test]
fn f32_solution_tracks_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (rows, y) = random_instance(&mut rng, 50, 6, 0.1);
    let rows32: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    let a = fit_linear(&rows, &y, &hp(1.0)).unwrap();
    let b = fit_linear(&rows32, &y, &Hyperparams { tol: 1e-3, ..hp(1.0) }).unwrap();
    let rel = (a.meta.primal_objective - b.meta.primal_objective).abs() / a.meta.primal_objective;
    assert!(rel < 1e-2, "{rel}");
}
