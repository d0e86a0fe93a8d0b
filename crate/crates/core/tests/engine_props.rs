mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use regimetest::augmentation::{build_design_matrix, residualize};
use regimetest::cohort::{counting_views, event_grid};
use regimetest::correction::correction_term;
use regimetest::linalg::{column_sums, pinv_rank, DEFAULT_RANK_TOLERANCE};
use regimetest::logrank::{covariance, logrank_pass, regime_cumhaz, run_test, TestOptions, Truncation};
use regimetest::propensity::{expit, fit_saturated};
use regimetest::sim::scenarios::select_regimes;
use regimetest::{BasisSpec, FittedPropensity, Regime};

fn fixed(l: f64, correction: bool) -> TestOptions {
    TestOptions {
        truncation: Truncation::Fixed(l),
        correction,
        ..TestOptions::default()
    }
}

fn scale(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(1.0_f64, |a, b| a.max(b.abs()))
}

#[test]
fn eight_regime_design_has_rank_five_and_nineteen_columns() {
    for seed in 0..3 {
        let (config, cohort) = scenario_cohort("5", 500, 0.0, seed);
        let fitted = fit_saturated(&cohort).unwrap();
        let score_only = build_design_matrix(&cohort, &fitted, &BasisSpec::default()).unwrap();
        assert_eq!(score_only.x.shape(), (500, 5));
        let full = build_design_matrix(&cohort, &fitted, &config.covariate_basis()).unwrap();
        assert_eq!(full.x.shape(), (500, 19));
        let r = run_test(&cohort, &config.embedded_regimes(), &fitted, &TestOptions::default()).unwrap();
        assert_eq!(r.components.len(), 7);
        assert_eq!(r.nu, 5, "seed {seed}");
    }
}

#[test]
fn four_regimes_without_control_have_full_rank() {
    for seed in 0..3 {
        let (config, cohort) = scenario_cohort("4", 500, 0.0, seed);
        let regimes = select_regimes(&config.embedded_regimes(), &[1, 2, 3, 4]).unwrap();
        let fitted = fit_saturated(&cohort).unwrap();
        let r = run_test(&cohort, &regimes, &fitted, &TestOptions::default()).unwrap();
        assert_eq!(r.nu, 3, "seed {seed}");
    }
}

#[test]
fn saturated_gamma_matches_stratum_counts() {
    let (_, cohort) = scenario_cohort("5", 800, 0.0, 11);
    let fitted = fit_saturated(&cohort).unwrap();
    let design = cohort.design();
    assert_eq!(design.strata(2).len(), 4);
    for (l, stratum) in design.strata(2).iter().enumerate() {
        let members: Vec<_> = (0..cohort.len())
            .filter(|&i| cohort.subjects()[i].kappa >= 2 && cohort.stratum(i, 2) == Some(l))
            .collect();
        let second = members
            .iter()
            .filter(|&&i| cohort.subjects()[i].treatment(2) == stratum.options[1])
            .count();
        let prop = second as f64 / members.len() as f64;
        let gamma = fitted.gamma_hat()[fitted.offset(2, l)];
        assert!((expit(gamma) - prop).abs() < 1e-12, "{}", stratum.name);
        // score block for members is the indicator residual
        for &i in &members {
            let s = &cohort.subjects()[i];
            let v = fitted.score_vector(s)[fitted.offset(2, l)];
            let ind = (s.treatment(2) == stratum.options[1]) as u8 as f64;
            assert!((v - (ind - prop)).abs() < 1e-12);
        }
    }
}

#[test]
fn known_probabilities_have_no_score() {
    let design = single_stage_design();
    let prop = half(&design);
    assert_eq!(prop.score_dim(), 0);
    let s = subject("a", &[1], &[0.0], &[], 1.0, true);
    assert_eq!(prop.predict(&s, 1, 1), 0.5);
    assert!(prop.score_vector(&s).is_empty());
}

#[test]
fn curves_are_monotone_and_start_at_one() {
    let (config, cohort) = scenario_cohort("3a", 400, 1.0, 5);
    let fitted = fit_saturated(&cohort).unwrap();
    let grid = event_grid(&cohort, Truncation::default().resolve(&cohort)).unwrap();
    for r in config.embedded_regimes() {
        let c = regime_cumhaz(&cohort, &r, &fitted, &grid).unwrap();
        assert_eq!((c.times[0], c.cumhaz[0], c.survival[0]), (0.0, 0.0, 1.0));
        for w in c.cumhaz.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in c.survival.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}

fn permute(regimes: &[Regime], order: &[usize]) -> Vec<Regime> {
    order.iter().map(|&i| regimes[i].clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn iid_columns_sum_to_score(seed in any::<u64>(), id in proptest::sample::select(vec!["1b", "3a", "5", "3stage"])) {
        let (config, cohort) = scenario_cohort(id, 200, 0.5, seed);
        let fitted = fit_saturated(&cohort).unwrap();
        let l = Truncation::default().resolve(&cohort);
        let pass = logrank_pass(&cohort, &config.embedded_regimes(), &fitted, l).unwrap();
        let sums = column_sums(&pass.iid);
        let tol = 1e-10 * scale(pass.score.iter().copied());
        for (a, b) in sums.iter().zip(pass.score.iter()) {
            prop_assert!((a - b).abs() < tol, "{} vs {}", a, b);
        }
    }

    #[test]
    fn statistic_invariant_to_regime_order(seed in any::<u64>(), order in Just(vec![0usize, 1, 2, 3]).prop_shuffle(), correction in any::<bool>()) {
        let (config, cohort) = scenario_cohort("3a", 250, 1.0, seed);
        let fitted = fit_saturated(&cohort).unwrap();
        let regimes = config.embedded_regimes();
        let options = TestOptions { correction, ..TestOptions::default() };
        let base = run_test(&cohort, &regimes, &fitted, &options).unwrap();
        let moved = run_test(&cohort, &permute(&regimes, &order), &fitted, &options).unwrap();
        prop_assert_eq!(base.nu, moved.nu);
        prop_assert!((base.statistic - moved.statistic).abs() <= 1e-8 * base.statistic.max(1.0),
            "{} vs {}", base.statistic, moved.statistic);
        // with the reference fixed, components follow the permutation
        if order[3] == 3 {
            for (pos, &j) in order[..3].iter().enumerate() {
                prop_assert!((moved.components[pos] - base.components[j]).abs() < 1e-9 * scale(base.components.iter().copied()));
            }
        }
    }

    #[test]
    fn grid_is_prefix_and_risk_sets_shrink(seed in any::<u64>(), l1 in 1.0f64..200.0, extra in 0.0f64..200.0) {
        let (_, cohort) = scenario_cohort("3a", 150, 0.0, seed);
        let short = event_grid(&cohort, l1).unwrap_or_default();
        let long = event_grid(&cohort, l1 + extra).unwrap_or_default();
        prop_assert!(short.len() <= long.len());
        prop_assert_eq!(&long[..short.len()], &short[..]);
        for s in cohort.subjects() {
            let mut events = 0.0;
            let mut prev_y = 1.0;
            for &u in &long {
                let (dn, y) = counting_views(s, u);
                events += dn;
                prop_assert!(y <= prev_y);
                prev_y = y;
            }
            prop_assert!(events == 0.0 || events == 1.0);
        }
    }

    #[test]
    fn duplication_scales_score_and_keeps_sigma(seed in any::<u64>(), m in 2usize..4) {
        let (config, cohort) = scenario_cohort("1b", 120, 0.0, seed);
        let regimes = config.embedded_regimes();
        let prop = FittedPropensity::uniform(cohort.design());
        let big = cohort.replicate(m).unwrap();
        let l = 2.5;
        let a = logrank_pass(&cohort, &regimes, &prop, l).unwrap();
        let b = logrank_pass(&big, &regimes, &prop, l).unwrap();
        let tol = 1e-10 * scale(a.score.iter().copied());
        for (x, y) in a.score.iter().zip(b.score.iter()) {
            prop_assert!((m as f64 * x - y).abs() < tol * m as f64);
        }
        let diff = covariance(&a.iid) - covariance(&b.iid);
        prop_assert!(max_abs(&diff) < 1e-10 * max_abs(&covariance(&a.iid)).max(1.0));
        let s1 = run_test(&cohort, &regimes, &prop, &fixed(l, false)).unwrap();
        let s2 = run_test(&big, &regimes, &prop, &fixed(l, false)).unwrap();
        prop_assert!((m as f64 * s1.statistic - s2.statistic).abs() < 1e-8 * s2.statistic.max(1.0));
        let c1 = correction_term(&a.iid, &a.g, cohort.len());
        let c2 = correction_term(&b.iid, &b.g, big.len());
        prop_assert!(max_abs(&(c1 / m as f64 - c2)) < 1e-12 * max_abs(&correction_term(&a.iid, &a.g, 1)).max(1.0));
    }

    #[test]
    fn score_projection_keeps_total(seed in any::<u64>(), id in proptest::sample::select(vec!["3a", "4", "5"])) {
        let (config, cohort) = scenario_cohort(id, 300, 0.0, seed);
        let fitted = fit_saturated(&cohort).unwrap();
        let x = build_design_matrix(&cohort, &fitted, &BasisSpec::default()).unwrap();
        let score_total = column_sums(&x.x);
        prop_assert!(score_total.amax() < 1e-9);
        let l = Truncation::default().resolve(&cohort);
        let pass = logrank_pass(&cohort, &config.embedded_regimes(), &fitted, l).unwrap();
        let r = residualize(&pass.iid, &x.x).unwrap();
        let before = column_sums(&pass.iid);
        let after = column_sums(&r);
        prop_assert!((before - after).amax() < 1e-8 * scale(pass.score.iter().copied()));
    }

    #[test]
    fn residuals_orthogonal_to_design(
        n in 4usize..40,
        p in 1usize..6,
        seed in any::<u64>(),
        dup in any::<bool>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
        if dup && p > 1 {
            let c = x.column(0).clone_owned();
            x.set_column(p - 1, &c);
        }
        let y = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-5.0..5.0));
        let r = residualize(&y, &x).unwrap();
        prop_assert!(max_abs(&(x.transpose() * &r)) < 1e-9 * max_abs(&y).max(1.0) * n as f64);
        // appending an all-zero column changes nothing
        let xz = x.clone().insert_column(p, 0.0);
        let rz = residualize(&y, &xz).unwrap();
        prop_assert!(max_abs(&(rz - &r)) < 1e-9);
    }

    #[test]
    fn pinv_reconstructs_psd(n in 1usize..8, rank in 1usize..8, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, rank.min(n), |_, _| rng.random_range(-2.0..2.0));
        let s = &b * b.transpose();
        let p = pinv_rank(&s, DEFAULT_RANK_TOLERANCE).unwrap();
        let recon = &s * &p.inverse * &s;
        prop_assert!(max_abs(&(recon - &s)) < 1e-9 * max_abs(&s).max(1.0));
        prop_assert!(p.rank <= rank.min(n));
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let q = (v.transpose() * &p.inverse * &v)[(0, 0)];
        prop_assert!(q >= -1e-9);
    }
}
