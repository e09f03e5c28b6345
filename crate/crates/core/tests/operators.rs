use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svi_torus::fields::{dirichlet_energy, inner_h, laplace, random_band_limited};
use svi_torus::operators::{dense_resolvent, OperatorSet};
use svi_torus::{CoefficientSet, ConvexPotential, PeriodicGrid, ScalarField};

fn ops(d: usize, n: usize, a: &str, b: &str) -> OperatorSet {
    let g = PeriodicGrid::new(d, n).unwrap();
    OperatorSet::new(CoefficientSet::from_keys(&g, a, b).unwrap()).unwrap()
}

fn band(g: &PeriodicGrid, band: usize, seed: u64) -> ScalarField {
    random_band_limited(g, band, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn l2(f: &ScalarField) -> f64 {
    f.norm_h()
}

/// 1D spectral first-derivative matrix with the Nyquist mode dropped.
fn diff_1d(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |j, m| {
        let mut s = 0.0;
        for k in -(n as i64) / 2 + 1..(n as i64) / 2 {
            let ph = 2.0 * PI * k as f64 * (j as f64 - m as f64) / n as f64;
            s -= 2.0 * PI * k as f64 * ph.sin();
        }
        s / n as f64
    })
}

/// `L^a` assembled as `sum_{jl} D_j diag(G_jl) D_l` from Kronecker derivative matrices.
fn dense_la(o: &OperatorSet) -> DMatrix<f64> {
    let g = o.grid();
    let n = g.n();
    let d1 = diff_1d(n);
    let eye = DMatrix::<f64>::identity(n, n);
    let dm = [d1.kronecker(&eye), eye.kronecker(&d1)];
    let gram = o.coeffs().gram_a();
    let mut l = DMatrix::zeros(g.len(), g.len());
    for j in 0..2 {
        for k in 0..2 {
            let diag = DMatrix::from_diagonal(&DVector::from_column_slice(gram.get(j, k).values()));
            l += &dm[j] * diag * &dm[k];
        }
    }
    l
}

#[test]
fn single_mode_resolvent() {
    let o = ops(1, 64, "identity", "zero");
    let u = o.grid().sample(|x| (2.0 * PI * 3.0 * x[0]).sin());
    for delta in [1e-4, 1e-2, 1.0] {
        let v = o.resolvent_ja(&u, delta).unwrap();
        let want = u.scale(1.0 / (1.0 + 36.0 * PI * PI * delta));
        assert!(v.sub(&want).unwrap().max_abs() < 1e-13);
    }
    assert_eq!(o.resolvent_ja(&u, 0.0).unwrap(), u);
    assert!(o.resolvent_ja(&u, -1.0).is_err());
}

#[test]
fn resolvent_matches_dense_oracle() {
    let o = ops(2, 8, "paper-2.5", "ones");
    let l = dense_la(&o);
    let u = band(o.grid(), 3, 7).add(&o.grid().constant(0.4)).unwrap();
    let la = o.apply_la(&u).unwrap();
    let want_la = &l * DVector::from_column_slice(u.values());
    let err_la = la
        .values()
        .iter()
        .zip(want_la.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err_la < 1e-9 * (1.0 + want_la.amax()), "{err_la}");
    for delta in [1e-3, 0.1] {
        let m = DMatrix::identity(l.nrows(), l.ncols()) - delta * &l;
        let want = m.lu().solve(&DVector::from_column_slice(u.values())).unwrap();
        let got = o.resolvent_ja(&u, delta).unwrap();
        let err = got
            .values()
            .iter()
            .zip(want.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "delta={delta}: {err}");
        let dense = dense_resolvent(&o, &u, delta).unwrap();
        assert!(dense.sub(&got).unwrap().max_abs() < 1e-8);
    }
}

#[test]
fn transport_coefficient_on_sine() {
    let o = ops(1, 64, "identity", "constant:0.5");
    let u = o.grid().sample(|x| (2.0 * PI * x[0]).sin());
    for delta in [0.0, 1e-3] {
        let bu = o.apply_b(&u, delta).unwrap();
        let want = o
            .grid()
            .sample(|x| 2.0 * PI * 0.5 * (2.0 * PI * x[0]).cos() / (1.0 + 4.0 * PI * PI * delta));
        assert!(bu.component(0).sub(&want).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn quadratic_potential_drift_is_scaled_laplacian() {
    let o = ops(2, 32, "paper-2.5", "zero");
    let pot = ConvexPotential::p_laplace(2.0).unwrap();
    let u = band(o.grid(), 2, 11);
    let lambda = 0.05;
    let drift = o.apply_drift(&u, &pot, lambda, 1e-3, 0.0).unwrap();
    let want = o.apply_la(&u).unwrap().scale(1.0 / (1.0 + lambda));
    assert!(drift.sub(&want).unwrap().max_abs() < 1e-9 * (1.0 + want.max_abs()));
    let eps = 0.1;
    let drift = o.apply_drift(&u, &pot, lambda, 1e-3, eps).unwrap();
    let want = o.apply_la(&u).unwrap().scale(1.0 / (1.0 + lambda) + eps);
    assert!(drift.sub(&want).unwrap().max_abs() < 1e-9 * (1.0 + want.max_abs()));
}

#[test]
fn noise_correction_for_constant_transport() {
    // a = 1, b = beta0: correction = beta0^2 J d^2 J u / 2.
    let o = ops(1, 64, "identity", "constant:0.5");
    let pot = ConvexPotential::p_laplace(2.0).unwrap();
    let u = o.grid().sample(|x| (2.0 * PI * 2.0 * x[0]).cos());
    let (lambda, delta) = (0.1, 1e-3);
    let drift = o.apply_drift(&u, &pot, lambda, delta, 0.0).unwrap();
    let s = 16.0 * PI * PI;
    let factor = -s / (1.0 + lambda) - 0.5 * 0.25 * s / (1.0 + s * delta).powi(2);
    assert!(drift.sub(&u.scale(factor)).unwrap().max_abs() < 1e-9 * factor.abs());
}

#[test]
fn quadratic_energy_of_sine() {
    let o = ops(1, 64, "identity", "zero");
    let u = o.grid().sample(|x| (2.0 * PI * x[0]).sin());
    let pot = ConvexPotential::p_laplace(2.0).unwrap();
    let psi = o.potential_energy(&u, &pot, 0.0).unwrap();
    assert!((psi - PI * PI).abs() < 1e-10);
    assert!((psi - 0.5 * dirichlet_energy(&u)).abs() < 1e-10);
    let psi_l = o.potential_energy(&u, &pot, 0.5).unwrap();
    assert!((psi_l - PI * PI / 1.5).abs() < 1e-10);
    let ms = ConvexPotential::minimal_surface();
    assert!(o.potential_energy(&o.grid().constant(2.0), &ms, 0.1).unwrap().abs() < 1e-15);
}

#[test]
fn non_elliptic_coefficients_are_rejected() {
    let g = PeriodicGrid::new(2, 8).unwrap();
    let c = CoefficientSet::from_keys(&g, "expr:sin(1,0),0;0,1", "zero").unwrap();
    assert!(OperatorSet::new(c).is_err());
}

#[test]
fn hilbert_schmidt_identity() {
    let o = ops(2, 32, "paper-2.5", "expr:1+0.2*sin(0,1),0.5;cos(1,0),1");
    for seed in 0..4 {
        let u = band(o.grid(), 5, seed);
        let lhs = -inner_h(&o.apply_lb(&u).unwrap(), &u).unwrap();
        let rhs = o.apply_b(&u, 0.0).unwrap().norm_h2();
        assert!((lhs - rhs).abs() < 1e-9 * rhs, "{lhs} vs {rhs}");
    }
}

fn coeff_key() -> impl Strategy<Value = (&'static str, &'static str)> {
    prop_oneof![
        Just(("identity", "zero")),
        Just(("identity", "killing")),
        Just(("paper-2.5", "ones")),
        Just(("paper-2.5", "zero")),
    ]
}

fn any_potential() -> impl Strategy<Value = ConvexPotential> {
    prop_oneof![
        (1.0f64..=2.0).prop_map(|q| ConvexPotential::p_laplace(q).unwrap()),
        Just(ConvexPotential::log_diffusion()),
        Just(ConvexPotential::minimal_surface()),
        Just(ConvexPotential::curve_shortening()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nonlinear_drift_is_monotone(
        key in coeff_key(),
        pot in any_potential(),
        s1 in any::<u64>(),
        s2 in any::<u64>(),
        lambda in 1e-3f64..0.5,
    ) {
        let o = ops(2, 16, key.0, "zero");
        let u = band(o.grid(), 4, s1);
        let v = band(o.grid(), 4, s2);
        let du = o.apply_drift(&u, &pot, lambda, 1e-3, 0.0).unwrap();
        let dv = o.apply_drift(&v, &pot, lambda, 1e-3, 0.0).unwrap();
        let w = u.sub(&v).unwrap();
        let inner = inner_h(&du.sub(&dv).unwrap(), &w).unwrap();
        prop_assert!(inner <= 1e-9 * (1.0 + du.norm_h() * w.norm_h()), "{inner}");
        prop_assert!(du.integral().abs() < 1e-10 * (1.0 + du.max_abs()));
    }

    #[test]
    fn full_drift_is_mean_free(key in coeff_key(), pot in any_potential(), seed in any::<u64>()) {
        let o = ops(2, 16, key.0, key.1);
        let u = band(o.grid(), 4, seed);
        let d = o.apply_drift(&u, &pot, 0.01, 1e-3, 0.1).unwrap();
        prop_assert!(d.integral().abs() < 1e-10 * (1.0 + d.max_abs()));
    }

    #[test]
    fn resolvents_contract(key in coeff_key(), seed in any::<u64>(), delta in 1e-4f64..1.0, k in -2.0f64..=0.0) {
        let o = ops(2, 16, key.0, key.1);
        let u = band(o.grid(), 6, seed).add(&o.grid().constant(0.3)).unwrap();
        let ju = o.resolvent_ja(&u, delta).unwrap();
        prop_assert!(l2(&ju) <= l2(&u) * (1.0 + 1e-10));
        prop_assert!((ju.integral() - u.integral()).abs() < 1e-12);
        let j0 = o.shifted_resolvent(&u, delta, k).unwrap();
        prop_assert!(l2(&j0) <= l2(&u) * (1.0 + 1e-10));
        // Dirichlet form decreases as well.
        let c = o.coeffs();
        prop_assert!(svi_torus::fields::form_a(&ju, &ju, c).unwrap() <= svi_torus::fields::form_a(&u, &u, c).unwrap() * (1.0 + 1e-9));
    }

    #[test]
    fn resolvent_identity(seed in any::<u64>(), delta in 1e-3f64..0.5, ratio in 0.05f64..0.95) {
        let o = ops(2, 16, "paper-2.5", "ones");
        let u = band(o.grid(), 6, seed);
        let mu = ratio * delta;
        let jd = o.resolvent_ja(&u, delta).unwrap();
        let inner = u.scale(mu / delta).axpy(1.0 - mu / delta, &jd).unwrap();
        let rhs = o.resolvent_ja(&inner, mu).unwrap();
        prop_assert!(jd.sub(&rhs).unwrap().max_abs() < 1e-7 * (1.0 + jd.max_abs()));
    }

    #[test]
    fn laplacian_generator_for_identity(seed in any::<u64>()) {
        let o = ops(2, 16, "identity", "zero");
        let u = band(o.grid(), 6, seed);
        prop_assert!(o.apply_la(&u).unwrap().sub(&laplace(&u)).unwrap().max_abs() < 1e-10 * (1.0 + laplace(&u).max_abs()));
    }
}
