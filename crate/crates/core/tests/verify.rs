use std::f64::consts::PI;

use proptest::prelude::*;
use svi_torus::operators::OperatorSet;
use svi_torus::simulator::{initial_condition, Scheme, SolverConfig};
use svi_torus::verify::{
    estimate_wdc_constant, loglog_slope, rate_study, semigroup, test_fields, verify_apriori_bound, verify_contraction,
    verify_energy_bound, verify_gradient_estimate, verify_potential_contraction, verify_svi_inequality, wdc_ratio,
    AprioriExponent, RateParameter, SviTest, VerifyReport,
};
use svi_torus::{CoefficientSet, ConvexPotential, PeriodicGrid};

fn preset(d: usize, n: usize, name: &str) -> OperatorSet {
    let g = PeriodicGrid::new(d, n).unwrap();
    OperatorSet::new(CoefficientSet::preset(&g, name).unwrap()).unwrap()
}

fn tv() -> ConvexPotential {
    ConvexPotential::p_laplace(1.0).unwrap()
}

#[test]
fn deterministic_energy_bound() {
    let o = preset(2, 16, "identity");
    let x = initial_condition(o.grid(), "sine", 0).unwrap();
    let cfg = SolverConfig::new(1e-2, 1e-3, 0.0, 5e-6, 1e-2);
    assert!(cfg.dt <= cfg.stability_bound(&o));
    let r = verify_energy_bound(&cfg, &x, &o, &tv()).unwrap();
    assert!(r.pass, "{r}");
    assert!((r.right - 0.5).abs() < 1e-12);
    assert_eq!(r.stderr, 0.0);
}

#[test]
fn zero_data_has_zero_energy() {
    let o = preset(2, 16, "paper-2.5");
    let x = o.grid().zeros();
    let cfg = SolverConfig::new(1e-2, 1e-3, 0.0, 1e-3, 1e-2)
        .with_scheme(Scheme::Stabilized)
        .with_paths(50, 1);
    let r = verify_energy_bound(&cfg, &x, &o, &tv()).unwrap();
    assert!(r.pass && r.left == 0.0 && r.right == 0.0, "{r}");
    let few = cfg.clone().with_paths(10, 1);
    assert!(verify_energy_bound(&few, &x, &o, &tv()).is_err());
}

#[test]
fn contraction_for_linear_transport() {
    // p = 2, constant coefficients: the difference solves the same linear equation.
    let o = preset(2, 16, "killing");
    let pot = ConvexPotential::p_laplace(2.0).unwrap();
    let x = initial_condition(o.grid(), "sine", 0).unwrap();
    let y = x
        .add(&initial_condition(o.grid(), "mode:1,1", 0).unwrap().scale(0.1))
        .unwrap();
    let cfg = SolverConfig::new(0.1, 1e-3, 0.0, 1e-3, 2e-2)
        .with_scheme(Scheme::Stabilized)
        .with_paths(8, 4);
    let r = verify_contraction(&cfg, &x, &y, &o, &pot).unwrap();
    assert!(r.pass, "{r}");
    assert!((r.right - 0.005).abs() < 1e-12);
}

#[test]
fn constant_coefficients_have_zero_commutator() {
    for name in ["identity", "killing"] {
        let o = preset(2, 16, name);
        let est = estimate_wdc_constant(&o, &[1.0, 10.0, 100.0], 4, 3).unwrap();
        assert!(est.c_hat.abs() < 1e-8, "{name}: {}", est.c_hat);
        assert!(est.stable && est.report.pass);
    }
    let o = preset(2, 16, "killing");
    let f = &test_fields(o.grid(), 1, 0)[0];
    assert!(wdc_ratio(&o, f, 5.0).unwrap().abs() < 1e-10);
    assert!(wdc_ratio(&o, f, 0.0).is_err());
}

#[test]
fn gradient_estimate_for_identity() {
    let o = preset(2, 16, "identity");
    let fields = test_fields(o.grid(), 3, 5);
    let est = verify_gradient_estimate(&o, &fields, &[1e-2, 5e-2], 64).unwrap();
    assert_eq!(est.k_hat, 0.0);
    assert!(est.raw > -1e-6, "{}", est.raw);
    assert!(est.report.pass, "{}", est.report);
}

#[test]
fn semigroup_of_a_mode() {
    let o = preset(1, 32, "identity");
    let u = o.grid().sample(|x| (2.0 * PI * x[0]).cos());
    let t = 1e-2;
    let k = 256;
    let v = semigroup(&o, &u, t, k).unwrap();
    let want = (1.0 + 4.0 * PI * PI * t / k as f64).powi(-(k as i32));
    assert!(v.sub(&u.scale(want)).unwrap().max_abs() < 1e-12);
    assert!((want - (-4.0 * PI * PI * t).exp()).abs() < 1e-3);
    assert!(semigroup(&o, &u, t, 8).is_err());
}

#[test]
fn resolvent_keeps_potentials_bounded() {
    for name in ["identity", "killing", "paper-2.5"] {
        let o = preset(2, 32, name);
        for pot in ConvexPotential::catalog() {
            let r = verify_potential_contraction(&o, &pot, 1e-2, 0.0, 10, 1).unwrap();
            assert!(r.pass, "{name} {pot}: {r}");
        }
    }
}

#[test]
fn apriori_bound_needs_constants() {
    let o = preset(2, 16, "identity");
    let x = initial_condition(o.grid(), "sine", 0).unwrap();
    let cfg = SolverConfig::new(1e-2, 1e-3, 0.1, 1e-4, 1e-2).with_scheme(Scheme::Stabilized);
    let pot = ConvexPotential::p_laplace(2.0).unwrap();
    assert!(verify_apriori_bound(&cfg, &x, &o, &pot, None, Some(0.0), AprioriExponent::Literal).is_err());
    assert!(verify_apriori_bound(&cfg, &x, &o, &pot, Some(1.0), Some(0.0), AprioriExponent::Literal).is_err());
    let r = verify_apriori_bound(&cfg, &x, &o, &pot, Some(0.0), Some(0.0), AprioriExponent::Gronwall).unwrap();
    assert!(r.pass && r.constants_used, "{r}");
}

#[test]
fn svi_inequality_for_every_test_element() {
    let o = preset(2, 16, "paper-2.5");
    let x = initial_condition(o.grid(), "sine", 0).unwrap();
    let cfg = SolverConfig::new(1e-2, 1e-3, 0.0, 1e-3, 2e-2)
        .with_scheme(Scheme::Stabilized)
        .with_paths(8, 2);
    let z0 = initial_condition(o.grid(), "mode:1,1", 0).unwrap().scale(0.5);
    for test in [SviTest::SelfTest, SviTest::Zero, SviTest::Heat { z0 }] {
        let r = verify_svi_inequality(&cfg, &x, &o, &tv(), &test).unwrap();
        assert!(r.pass, "{}: {r}", test.name());
    }
}

#[test]
fn delta_study_without_noise_is_skipped() {
    let g = PeriodicGrid::new(2, 16).unwrap();
    let o = OperatorSet::new(CoefficientSet::from_keys(&g, "identity", "zero").unwrap()).unwrap();
    let x = initial_condition(&g, "sine", 0).unwrap();
    let cfg = SolverConfig::new(1e-2, 1e-3, 0.0, 1e-3, 1e-2).with_scheme(Scheme::Stabilized);
    let s = rate_study(&cfg, &x, &o, &tv(), RateParameter::Delta, &[4e-3, 2e-3, 1e-3, 5e-4]).unwrap();
    assert!(s.errors.iter().all(|e| *e == 0.0));
    assert!(s.report.pass);
    assert!(rate_study(&cfg, &x, &o, &tv(), RateParameter::Lambda, &[0.1, 0.05]).is_err());
    assert!("eps".parse::<RateParameter>().unwrap() == RateParameter::Epsilon);
    assert!("mu".parse::<RateParameter>().is_err());
}

#[test]
fn lambda_rate_for_quadratic_potential() {
    // p = 2, a = 1, b = 0: mode amplitude exp(-s t / (1 + lambda)), so the squared
    // difference is linear in the lambda gap for small lambda.
    let o = preset(1, 32, "identity");
    let x = initial_condition(o.grid(), "sine", 0).unwrap();
    let cfg = SolverConfig::new(1e-2, 1e-3, 0.0, 1e-3, 5e-2).with_scheme(Scheme::Stabilized);
    let s = rate_study(
        &cfg,
        &x,
        &o,
        &ConvexPotential::p_laplace(2.0).unwrap(),
        RateParameter::Lambda,
        &[0.1, 0.05, 0.025, 0.0125],
    )
    .unwrap();
    assert!(s.monotone, "{:?}", s.errors);
    assert!(s.slope.unwrap() > 1.5, "{:?}", s.slope);
}

proptest! {
    #[test]
    fn slope_recovers_exponent(c in 0.01f64..100.0, p in -3.0f64..3.0) {
        let x = [1.0f64, 0.5, 0.25, 0.125, 0.0625];
        let y: Vec<f64> = x.iter().map(|v| c * v.powf(p)).collect();
        prop_assert!((loglog_slope(&x, &y).unwrap() - p).abs() < 1e-10);
    }

    #[test]
    fn pass_rule_is_three_sigma(left in -10.0f64..10.0, right in -10.0f64..10.0, se in 0.0f64..1.0, tol in 0.0f64..0.1) {
        let r = VerifyReport::new("x", left, right, se, tol);
        prop_assert_eq!(r.pass, right - left >= -3.0 * se - tol);
        prop_assert!((r.margin - (right - left)).abs() < 1e-15);
    }
}
