mod common;

use exmatch::balance::{smd, weighted_mean};
use exmatch::data::{encode, Covariate, CovariateSchema, CovariateTable, Value};
use exmatch::lp::{is_feasible, Feasibility};
use exmatch::matching::{build_qp, ess, feasibility_problem, match_weights, MatchSpec};
use exmatch::numerics::Matrix;
use exmatch::propensity::fit_logistic_design;
use exmatch::response::estimate_from;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

proptest! {
    #[test]
    fn uniform_weighted_mean_is_plain_mean(v in prop::collection::vec(-1.0..1.0f64, 1..60), c in 0.01..100.0f64) {
        let plain = v.iter().sum::<f64>() / v.len() as f64;
        let w = vec![c; v.len()];
        prop_assert!((weighted_mean(&v, &w).unwrap() - plain).abs() <= 1e-12);
    }

    #[test]
    fn smd_is_affine_invariant(
        a in prop::collection::vec(-10.0..10.0f64, 3..30),
        b in prop::collection::vec(-10.0..10.0f64, 3..30),
        scale in prop::sample::select(vec![-3.5, -0.2, 0.7, 12.0]),
        shift in -50.0..50.0f64,
    ) {
        let t = |v: &[f64]| v.iter().map(|x| scale * x + shift).collect::<Vec<_>>();
        let (ta, tb) = (t(&a), t(&b));
        if let (Ok(before), Ok(after)) = (smd([&a, &b], None), smd([&ta, &tb], None)) {
            prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before));
        }
        let wa: Vec<f64> = (0..a.len()).map(|i| 1.0 + (i % 3) as f64).collect();
        let wb: Vec<f64> = (0..b.len()).map(|i| 0.5 + (i % 4) as f64).collect();
        if let (Ok(before), Ok(after)) = (smd([&a, &b], Some([&wa, &wb])), smd([&ta, &tb], Some([&wa, &wb]))) {
            prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before));
        }
    }

    #[test]
    fn response_estimates_are_scale_free(
        y in prop::collection::vec(-5.0..5.0f64, 2..40),
        c in 0.001..1000.0f64,
    ) {
        let w: Vec<f64> = (0..y.len()).map(|i| 0.2 + (i % 5) as f64).collect();
        let cw: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = estimate_from([&y, &y], [&w, &w], 0.95).unwrap();
        let b = estimate_from([&y, &y], [&cw, &cw], 0.95).unwrap();
        prop_assert!((a.studies[0].mean - b.studies[0].mean).abs() <= 1e-12 * 5.0);
        prop_assert!((a.studies[0].var_mean - b.studies[0].var_mean).abs() <= 1e-12 * (1.0 + a.studies[0].var_mean));
    }

    #[test]
    fn ess_lies_between_one_and_n(w in prop::collection::vec(0.0..10.0f64, 1..80)) {
        if let Ok(e) = ess(&w) {
            prop_assert!(e >= 1.0 - 1e-12 && e <= w.len() as f64 + 1e-9);
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn weights_invariant_under_affine_recoding_of_a_column() {
    let mut r = rng(10);
    let a = common::normal_points(&mut r, 25, 3, &[0.0, 0.0, 0.0]);
    let b = common::normal_points(&mut r, 30, 3, &[0.4, -0.2, 0.1]);
    let recode = |pts: &[Vec<f64>]| {
        pts.iter()
            .map(|p| vec![p[0], 3.0 * p[1] - 7.0, p[2]])
            .collect::<Vec<_>>()
    };
    for spec in [MatchSpec::unconstrained(), MatchSpec::constrained()] {
        let s1 = match_weights(&encode(&common::points_table(&a, &b)), &spec).unwrap();
        let s2 = match_weights(
            &encode(&common::points_table(&recode(&a), &recode(&b))),
            &spec,
        )
        .unwrap();
        assert!(s1.is_matched() && s2.is_matched());
        for k in 0..2 {
            for (x, y) in s1.weights[k].iter().zip(&s2.weights[k]) {
                assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn weights_follow_row_permutation() {
    let mut r = rng(11);
    let a = common::normal_points(&mut r, 20, 2, &[0.0, 0.0]);
    let b = common::normal_points(&mut r, 15, 2, &[0.3, 0.3]);
    let mut a_rev = a.clone();
    a_rev.reverse();
    let s1 = match_weights(
        &encode(&common::points_table(&a, &b)),
        &MatchSpec::unconstrained(),
    )
    .unwrap();
    let s2 = match_weights(
        &encode(&common::points_table(&a_rev, &b)),
        &MatchSpec::unconstrained(),
    )
    .unwrap();
    let n = a.len();
    for i in 0..n {
        assert!((s1.weights[0][i] - s2.weights[0][n - 1 - i]).abs() <= 1e-9);
    }
}

#[test]
fn exact_weights_have_minimum_norm_among_feasible_weights() {
    // any nonnegative solution of the same system (here the LP vertex) has ‖w‖² at least the QP optimum
    let mut r = rng(12);
    for _ in 0..30 {
        let table = common::mixed_table(&mut r, [40, 50], 4, 0.3);
        let dm = encode(&table);
        let built = build_qp(&dm, &MatchSpec::unconstrained()).unwrap();
        let s = match_weights(&dm, &MatchSpec::unconstrained()).unwrap();
        let Feasibility::Feasible { witness } = is_feasible(&feasibility_problem(&built)) else {
            assert!(!s.is_matched());
            continue;
        };
        assert!(s.is_matched());
        let qp_norm: f64 = s.weights.iter().flatten().map(|w| w * w).sum();
        let lp_norm: f64 = witness.iter().map(|w| w * w).sum();
        assert!(qp_norm <= lp_norm + 1e-9, "{qp_norm} > {lp_norm}");
        // minimum norm means maximum combined effective sample size
        assert!(s.ess.unwrap().iter().all(|&e| e >= 1.0));
    }
}

#[test]
fn constrained_means_lie_inside_the_observed_box() {
    let mut r = rng(13);
    for _ in 0..20 {
        let table = common::mixed_table(&mut r, [60, 60], 5, 0.4);
        let dm = encode(&table);
        let s = match_weights(&dm, &MatchSpec::constrained()).unwrap();
        if !s.is_matched() {
            continue;
        }
        let obs = dm.means();
        let wm = s.weighted_means.as_ref().unwrap();
        for c in 0..dm.n_cols() {
            let (lo, hi) = (obs[0][c].min(obs[1][c]), obs[0][c].max(obs[1][c]));
            assert!(
                wm[0][c] >= lo - 1e-8 && wm[0][c] <= hi + 1e-8,
                "{}",
                dm.column_names[c]
            );
        }
    }
}

#[test]
fn logistic_fit_recovers_known_coefficients() {
    let mut r = rng(14);
    let beta = [-0.4, 0.8, -1.2];
    let n = 10_000;
    let mut rows = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = r.sample(StandardNormal);
        let x2 = f64::from(u8::from(r.random_bool(0.4)));
        let eta = beta[0] + beta[1] * x1 + beta[2] * x2;
        let p = 1.0 / (1.0 + (-eta).exp());
        rows.push(vec![1.0, x1, x2]);
        z.push(f64::from(u8::from(r.random_bool(p))));
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let names = ["(intercept)", "x1", "x2"].map(String::from).to_vec();
    let m = fit_logistic_design(&x, &z, &names).unwrap();
    assert!(m.converged);
    for j in 0..3 {
        let err = (m.coefficients[j] - beta[j]).abs();
        assert!(
            err <= 3.0 * m.standard_errors[j],
            "{}: {err} vs SE {}",
            names[j],
            m.standard_errors[j]
        );
    }
}

#[test]
fn categorical_levels_balance_as_proportions() {
    let schema = CovariateSchema::new(vec![Covariate::categorical("g", ["a", "b", "c"])]).unwrap();
    let levels = [0, 0, 1, 2, 2, 0, 1, 1, 1, 2];
    let study = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let values = levels.iter().map(|&l| vec![Value::Level(l)]).collect();
    let table = CovariateTable::new(schema, study, values, None).unwrap();
    let dm = encode(&table);
    let s = match_weights(&dm, &MatchSpec::unconstrained()).unwrap();
    assert!(s.is_matched());
    assert!(common::max_mean_gap(&dm, &s.weights) <= 1e-10);
    let wm = s.weighted_means.unwrap();
    assert!((wm[0].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}
