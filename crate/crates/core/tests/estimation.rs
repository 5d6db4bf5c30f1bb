use std::collections::BTreeMap;

use fwdshape::constraints::{build_constraints, fix_coefficients, max_abs_gap, zero_intercept_constraints, ConstraintSystem};
use fwdshape::dataset::Dataset;
use fwdshape::estimator::{
    classical_fit, irls_fit, outlier_report, penalized_wls_solve, penalized_wls_solve_reduced, AlphaPolicy, FitConfig,
    FitReport, FitResult,
};
use fwdshape::market::build_regression_dataset;
use fwdshape::synthetic::{synthesize_market, Contamination, SyntheticMarket, SyntheticMarketConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{objective, quadratic_minimizer, year_quarters, TABLE_GAMMA};

fn market_dataset(config: &SyntheticMarketConfig) -> (Dataset, SyntheticMarket) {
    let market = synthesize_market(config).unwrap();
    let (ds, _) = build_regression_dataset(&market.table, &year_quarters(2013)).unwrap();
    (ds, market)
}

fn system() -> ConstraintSystem {
    build_constraints(&year_quarters(2013))
}

/// Per-column OLS standard errors of slope and intercept.
fn ols_standard_errors(ds: &Dataset) -> Vec<f64> {
    let n = ds.n() as f64;
    let mx = ds.x().iter().sum::<f64>() / n;
    let sxx: f64 = ds.x().iter().map(|x| (x - mx).powi(2)).sum();
    let mut out = Vec::new();
    for c in 0..ds.k() {
        let y: Vec<f64> = ds.y().column(c).iter().copied().collect();
        let my = y.iter().sum::<f64>() / n;
        let slope = ds.x().iter().zip(&y).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
        let intercept = my - slope * mx;
        let rss: f64 = ds.x().iter().zip(&y).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
        let s = (rss / (n - 2.0)).sqrt();
        out.push(s / sxx.sqrt());
        out.push(s * (1.0 / n + mx * mx / sxx).sqrt());
    }
    out
}

#[test]
fn clean_fit_lies_within_three_standard_errors() {
    let config = SyntheticMarketConfig { n_dates: 500, seed: 7, ..Default::default() };
    let (ds, _) = market_dataset(&config);
    let fit = irls_fit(&ds, &system(), &FitConfig::default()).unwrap();
    let se = ols_standard_errors(&ds);
    for (i, ((est, truth), se)) in fit.gamma.iter().zip(&config.gamma).zip(&se).enumerate() {
        assert!((est - truth).abs() <= 3.0 * se, "coefficient {i}: {est} vs {truth}, se {se}");
    }
    assert!(fit.arbitrage_gap_maxabs <= 1e-6);
    assert!(fit.converged);
}

#[test]
fn robust_fit_resists_vertical_outliers() {
    let config = SyntheticMarketConfig { n_dates: 500, fraction: 0.15, magnitude: 10.0, seed: 3, ..Default::default() };
    let (dirty, _) = market_dataset(&config);
    let (clean, _) = market_dataset(&SyntheticMarketConfig { fraction: 0.0, ..config });
    let sys = system();
    let cfg = FitConfig::default();
    let reference = irls_fit(&clean, &sys, &cfg).unwrap();
    let robust = irls_fit(&dirty, &sys, &cfg).unwrap();
    let classical = classical_fit(&dirty, &sys, cfg.alpha.resolve(&dirty).unwrap()).unwrap();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let robust_dev = dist(&robust.gamma, &reference.gamma);
    let classical_dev = dist(&classical.gamma, &reference.gamma);
    assert!(robust_dev < 0.2 * classical_dev, "robust {robust_dev}, classical {classical_dev}");
}

#[test]
fn classical_and_robust_agree_on_clean_data() {
    let (ds, _) = market_dataset(&SyntheticMarketConfig { n_dates: 400, seed: 11, ..Default::default() });
    let sys = system();
    let cfg = FitConfig::default();
    let robust = irls_fit(&ds, &sys, &cfg).unwrap();
    let classical = classical_fit(&ds, &sys, cfg.alpha.resolve(&ds).unwrap()).unwrap();
    for (r, c) in robust.slopes().iter().zip(classical.slopes()) {
        assert!((r - c).abs() / c.abs() < 0.02, "{r} vs {c}");
    }
}

#[test]
fn feasible_for_multipliers_from_two_and_a_half() {
    let fixtures = [
        SyntheticMarketConfig::default(),
        SyntheticMarketConfig { fraction: 0.1, seed: 2, ..Default::default() },
        SyntheticMarketConfig { fraction: 0.25, seed: 4, ..Default::default() },
        SyntheticMarketConfig { fraction: 0.1, contamination: Contamination::Leverage, magnitude: 3.0, seed: 5, ..Default::default() },
        SyntheticMarketConfig { noise: vec![0.2, 0.8, 0.5, 1.0], seed: 6, ..Default::default() },
    ];
    for config in &fixtures {
        let (ds, _) = market_dataset(config);
        for c in [2.5, 5.0, 10.0, 100.0] {
            let cfg = FitConfig { alpha: AlphaPolicy::Auto { multiplier: c }, ..FitConfig::default() };
            let fit = irls_fit(&ds, &system(), &cfg).unwrap();
            assert!(fit.arbitrage_gap_maxabs <= 1e-6, "seed {} c {c}: gap {}", config.seed, fit.arbitrage_gap_maxabs);
        }
    }
}

#[test]
fn fit_result_invariants() {
    let (ds, _) = market_dataset(&SyntheticMarketConfig { fraction: 0.2, seed: 9, ..Default::default() });
    let sys = system();
    let cfg = FitConfig::default();
    let fit = irls_fit(&ds, &sys, &cfg).unwrap();
    assert!(fit.case_weights.iter().all(|w| (0.0..=1.0).contains(w)));
    assert!(fit.iterations <= cfg.max_iterations);
    assert!((max_abs_gap(&sys, &fit.gamma).unwrap() - fit.arbitrage_gap_maxabs).abs() <= 1e-12);
    assert_eq!(fit.case_ids, ds.case_ids());
}

#[test]
fn zero_intercept_rows_with_large_penalty() {
    let (ds, _) = market_dataset(&SyntheticMarketConfig { seed: 12, ..Default::default() });
    let sys = system().append(&zero_intercept_constraints(4)).unwrap();
    let cfg = FitConfig { alpha: AlphaPolicy::Fixed(1e12), ..FitConfig::default() };
    let fit = irls_fit(&ds, &sys, &cfg).unwrap();
    for b in fit.intercepts() {
        assert!(b.abs() <= 1e-6, "intercept {b}");
    }
    let slope_sum: f64 = fit.slopes().iter().sum::<f64>() / 4.0;
    assert!((slope_sum - 1.0).abs() <= 1e-6);
}

#[test]
fn outlier_report_finds_injected_cases_with_few_false_flags() {
    let config = SyntheticMarketConfig { fraction: 0.1, magnitude: 20.0, seed: 21, ..Default::default() };
    let (ds, market) = market_dataset(&config);
    let fit = irls_fit(&ds, &system(), &FitConfig::default()).unwrap();
    let flagged: Vec<String> = outlier_report(&fit, 0.6).into_iter().map(|(id, _)| id).collect();
    let bad = market.contaminated_ids();
    assert!(bad.iter().all(|id| flagged.contains(id)));
    // a clean Gaussian case lands past the cut about once in a few hundred
    let false_flags = flagged.iter().filter(|id| !market.labels[*id]).count();
    assert!(false_flags <= 2, "{false_flags} clean cases flagged");

    let report = outlier_report(&fit, 0.6);
    assert!(report.windows(2).all(|w| w[0].1 <= w[1].1));
    let below_one = fit.case_weights.iter().filter(|w| **w < 1.0).count();
    assert_eq!(outlier_report(&fit, 1.0).len(), below_one);
}

#[test]
fn outlier_report_empty_for_unit_weights() {
    let (ds, _) = market_dataset(&SyntheticMarketConfig::default());
    let fit = classical_fit(&ds, &system(), 0.0).unwrap();
    assert!(outlier_report(&fit, 0.6).is_empty());
    assert!(outlier_report(&fit, 1.0).is_empty());
}

#[test]
fn contaminated_rows_get_lower_mean_weight() {
    for contamination in [Contamination::Vertical, Contamination::Leverage] {
        let config = SyntheticMarketConfig { fraction: 0.2, magnitude: 8.0, contamination, seed: 31, ..Default::default() };
        let (ds, market) = market_dataset(&config);
        let fit = irls_fit(&ds, &system(), &FitConfig::default()).unwrap();
        let mean = |flag: bool| {
            let w: Vec<f64> = fit.case_ids.iter().zip(&fit.case_weights).filter(|(id, _)| market.labels[*id] == flag).map(|(_, w)| *w).collect();
            w.iter().sum::<f64>() / w.len() as f64
        };
        assert!(mean(true) < mean(false), "{contamination:?}: {} vs {}", mean(true), mean(false));
    }
}

#[test]
fn report_round_trips_through_json() {
    let (ds, _) = market_dataset(&SyntheticMarketConfig { fraction: 0.1, ..Default::default() });
    let fit = irls_fit(&ds, &system(), &FitConfig::default()).unwrap().with_labels(year_quarters(2013).labels());
    let report = fit.report(Some("CAL->Q"));
    let text = report.to_json().unwrap();
    let back = FitReport::from_json(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.coefficient_map()["Q2"], (fit.gamma[2], fit.gamma[3]));
    assert_eq!(back.weights.len(), ds.n());
    let raw: FitResult = serde_json::from_str(&serde_json::to_string(&fit).unwrap()).unwrap();
    assert_eq!(raw, fit);
}

#[test]
fn exact_data_is_recovered_by_both_fits() {
    let (ds, _) = market_dataset(&SyntheticMarketConfig { noise: vec![0.0], n_dates: 40, ..Default::default() });
    let sys = system();
    let robust = irls_fit(&ds, &sys, &FitConfig::default()).unwrap();
    let classical = classical_fit(&ds, &sys, 1e3).unwrap();
    for ((r, c), t) in robust.gamma.iter().zip(&classical.gamma).zip(TABLE_GAMMA) {
        assert!((r - t).abs() <= 1e-10 && (c - t).abs() <= 1e-10);
    }
}

fn random_problem(rng: &mut ChaCha8Rng, k: usize, n: usize) -> (Vec<f64>, DMatrix<f64>, Vec<f64>, ConstraintSystem) {
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..70.0)).collect();
    let y = DMatrix::from_fn(n, k, |i, _| x[i] * rng.gen_range(0.7..1.3) + rng.gen_range(-4.0..4.0));
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..2.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut m = DMatrix::zeros(2, 2 * k);
    for c in 0..k {
        m[(0, 2 * c)] = raw[c] / total;
        m[(1, 2 * c + 1)] = raw[c] / total;
    }
    (x, y, w, ConstraintSystem::new(m, DVector::from_vec(vec![1.0, 0.0])).unwrap())
}

#[test]
fn fixed_solve_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for inst in 0..60 {
        let k = rng.gen_range(2..=4);
        let n = rng.gen_range(6..=40);
        let alpha = [0.5, 10.0, 1e3][inst % 3];
        let (x, y, w, sys) = random_problem(&mut rng, k, n);
        // pin one whole child plus possibly one more coefficient; child 0 stays free
        let mut fixed = BTreeMap::new();
        let pinned_child = rng.gen_range(1..k);
        fixed.insert(2 * pinned_child, rng.gen_range(0.8..1.2));
        fixed.insert(2 * pinned_child + 1, rng.gen_range(-2.0..2.0));
        if k > 2 && rng.gen_bool(0.5) {
            let other = (1..k).find(|c| *c != pinned_child).unwrap();
            fixed.insert(2 * other + 1, rng.gen_range(-2.0..2.0));
        }
        let reduced = fix_coefficients(&sys, &fixed).unwrap();
        let got = penalized_wls_solve_reduced(&x, &y, &w, &reduced, alpha).unwrap();
        for (idx, v) in &fixed {
            assert_eq!(got[*idx], *v);
        }
        let free = reduced.free.clone();
        let f = |z: &[f64]| {
            let mut g = vec![0.0; 2 * k];
            for (idx, v) in &fixed {
                g[*idx] = *v;
            }
            for (slot, v) in free.iter().zip(z) {
                g[*slot] = *v;
            }
            objective(&x, &y, &w, &sys, alpha, &g)
        };
        let oracle = quadratic_minimizer(&f, free.len());
        for (slot, v) in free.iter().zip(&oracle) {
            assert!((got[*slot] - v).abs() <= 1e-6 * (1.0 + v.abs()), "instance {inst} slot {slot}: {} vs {v}", got[*slot]);
        }
    }
}

#[test]
fn permutation_invariance_on_contaminated_data() {
    let (ds, _) = market_dataset(&SyntheticMarketConfig { fraction: 0.2, seed: 41, ..Default::default() });
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.reverse();
    order.swap(3, 50);
    let shuffled = ds.select(&order).unwrap();
    let sys = system();
    let a = irls_fit(&ds, &sys, &FitConfig::default()).unwrap();
    let b = irls_fit(&shuffled, &sys, &FitConfig::default()).unwrap();
    for (u, v) in a.gamma.iter().zip(&b.gamma) {
        assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
    }
    for (pos, &orig) in order.iter().enumerate() {
        assert!((b.case_weights[pos] - a.case_weights[orig]).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penalty_gap_is_monotone(seed in 0u64..10_000, alpha in 1e-3f64..1e3, factor in 10.0f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, _, sys) = random_problem(&mut rng, 3, 20);
        let ones = vec![1.0; x.len()];
        let low = penalized_wls_solve(&x, &y, &ones, &sys, alpha).unwrap();
        let high = penalized_wls_solve(&x, &y, &ones, &sys, alpha * factor).unwrap();
        let g_low = max_abs_gap(&sys, &low).unwrap();
        let g_high = max_abs_gap(&sys, &high).unwrap();
        prop_assert!(g_high <= g_low + 1e-9, "{g_high} > {g_low}");
    }

    #[test]
    fn solve_matches_oracle_for_two_children(seed in 0u64..10_000, alpha in prop::sample::select(vec![0.0, 0.1, 1.0, 100.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, w, sys) = random_problem(&mut rng, 2, 5);
        let got = penalized_wls_solve(&x, &y, &w, &sys, alpha).unwrap();
        let oracle = quadratic_minimizer(&|g: &[f64]| objective(&x, &y, &w, &sys, alpha, g), 4);
        for (a, b) in got.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
