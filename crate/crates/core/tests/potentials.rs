use proptest::prelude::*;
use svi_torus::ConvexPotential;

/// Brute-force scalar prox: dense scan of the objective followed by ternary refinement.
fn oracle_prox(p: &ConvexPotential, r: f64, lambda: f64) -> f64 {
    let obj = |s: f64| p.theta(s) + (r - s) * (r - s) / (2.0 * lambda);
    let steps = 2000;
    let mut best = 0;
    for i in 0..=steps {
        if obj(r * i as f64 / steps as f64) < obj(r * best as f64 / steps as f64) {
            best = i;
        }
    }
    let h = r / steps as f64;
    let (mut lo, mut hi) = ((best as f64 - 1.0).max(0.0) * h, ((best + 1) as f64 * h).min(r));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if obj(m1) <= obj(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn closed_form_prox_matches_oracle() {
    for p in [
        ConvexPotential::p_laplace(1.0).unwrap(),
        ConvexPotential::p_laplace(2.0).unwrap(),
    ] {
        for r in [0.0f64, 1e-3, 0.05, 0.5, 1.0, 3.0, 40.0] {
            for l in [1e-3, 1e-2, 0.1, 1.0] {
                let want = match p.name() {
                    "p-laplace:1" => (r - l).max(0.0),
                    _ => r / (1.0 + l),
                };
                let got = p.scalar_prox(r, l).unwrap();
                assert!((got - want).abs() <= 1e-12 * (1.0 + r), "{p} r={r} l={l}");
                if r > 0.0 {
                    assert!((got - oracle_prox(&p, r, l)).abs() < 1e-7 * (1.0 + r));
                }
            }
        }
    }
}

#[test]
fn numeric_prox_matches_oracle() {
    for p in ConvexPotential::catalog() {
        for r in [1e-3, 0.05, 0.5, 1.0, 3.0, 40.0] {
            for l in [1e-3, 1e-2, 0.1, 1.0] {
                let got = p.numeric_prox(r, l);
                let want = oracle_prox(&p, r, l);
                assert!(
                    (got - want).abs() < 1e-7 * (1.0 + r),
                    "{p} r={r} l={l}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn numeric_prox_agrees_with_closed_forms() {
    for p in [
        ConvexPotential::p_laplace(1.0).unwrap(),
        ConvexPotential::p_laplace(2.0).unwrap(),
    ] {
        for r in [1e-2, 0.3, 2.0, 17.0] {
            for l in [1e-3, 0.1, 1.0] {
                let a = p.numeric_prox(r, l);
                let b = p.scalar_prox(r, l).unwrap();
                assert!((a - b).abs() < 1e-9 * (1.0 + r), "{p} r={r} l={l}");
            }
        }
    }
}

#[test]
fn theta_values() {
    let ms = ConvexPotential::minimal_surface();
    assert_eq!(ms.theta0(), 1.0);
    assert_eq!(ms.eval_psi(&[0.0, 0.0]).unwrap(), 1.0);
    for p in ConvexPotential::catalog() {
        if p.name() != "minimal-surface" {
            assert_eq!(p.theta0(), 0.0, "{p}");
        }
    }
    let tv = ConvexPotential::p_laplace(1.0).unwrap();
    assert!((tv.eval_psi(&[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-15);
    let ld = ConvexPotential::log_diffusion();
    assert!((ld.theta(1.0) - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
}

#[test]
fn envelope_gradient_matches_finite_differences() {
    let h = 1e-6;
    for p in ConvexPotential::catalog() {
        for z in [[0.3, -0.7], [2.0, 1.0], [-0.01, 0.02]] {
            let l = 0.05;
            let g = p.yosida_grad(&z, l).unwrap();
            for i in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                let fd = (p.moreau_eval(&zp, l).unwrap() - p.moreau_eval(&zm, l).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()),
                    "{p} z={z:?}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }
}

#[test]
fn p_laplace_doubling_is_two_to_the_p() {
    for q in [1.0, 1.25, 1.5, 2.0] {
        let p = ConvexPotential::p_laplace(q).unwrap();
        let rep = p.verify_condition_n(100.0, 400);
        assert!(rep.pass, "{rep:?}");
        assert!((rep.k_hat - 2f64.powf(q)).abs() < 1e-9, "{rep:?}");
        assert!(p.subgrad_bound_check(400).pass);
    }
    assert!(ConvexPotential::p_laplace(2.5).is_err());
    assert!(ConvexPotential::p_laplace(0.5).is_err());
}

#[test]
fn catalog_passes_condition_n() {
    for p in ConvexPotential::catalog() {
        let rep = p.verify_condition_n(100.0, 400);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.k_hat.is_finite() && rep.c_hat.is_finite());
    }
}

#[test]
fn parse_names() {
    for p in ConvexPotential::catalog() {
        let back: ConvexPotential = p.name().parse().unwrap();
        assert_eq!(back, p);
    }
    assert!("p-laplace:x".parse::<ConvexPotential>().is_err());
    assert!("nope".parse::<ConvexPotential>().is_err());
}

#[test]
fn rejects_bad_lambda() {
    let p = ConvexPotential::log_diffusion();
    assert!(p.scalar_prox(1.0, 0.0).is_err());
    assert!(p.scalar_prox(-1.0, 0.1).is_err());
    assert!(p.prox(&[1.0], -0.1).is_err());
}

#[test]
fn moreau_fit_single_constant() {
    let radii: Vec<f64> = (0..60).map(|i| 1e-3 * 1.2f64.powi(i)).collect();
    let lambdas = [1e-1, 5e-2, 1e-2, 1e-3, 1e-4];
    for p in ConvexPotential::catalog() {
        let fit = p.fit_moreau_constant(&radii, &lambdas).unwrap();
        assert!(fit.pointwise_ok && fit.monotone_in_lambda, "{fit:?}");
        assert!(fit.c_hat.is_finite() && fit.c_hat <= 1.0, "{fit:?}");
    }
}

fn any_potential() -> impl Strategy<Value = ConvexPotential> {
    prop_oneof![
        (1.0f64..=2.0).prop_map(|q| ConvexPotential::p_laplace(q).unwrap()),
        Just(ConvexPotential::log_diffusion()),
        Just(ConvexPotential::minimal_surface()),
        Just(ConvexPotential::curve_shortening()),
    ]
}

fn vec2() -> impl Strategy<Value = [f64; 2]> {
    [-5.0f64..5.0, -5.0f64..5.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prox_is_firmly_nonexpansive(p in any_potential(), z in vec2(), y in vec2(), l in 1e-3f64..1.0) {
        let pz = p.prox(&z, l).unwrap();
        let py = p.prox(&y, l).unwrap();
        let dp = [pz[0] - py[0], pz[1] - py[1]];
        let dz = [z[0] - y[0], z[1] - y[1]];
        let lhs = dp[0] * dp[0] + dp[1] * dp[1];
        let rhs = dp[0] * dz[0] + dp[1] * dz[1];
        prop_assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn yosida_is_monotone_and_lipschitz(p in any_potential(), z in vec2(), y in vec2(), l in 1e-3f64..1.0) {
        let gz = p.yosida_grad(&z, l).unwrap();
        let gy = p.yosida_grad(&y, l).unwrap();
        let dg = [gz[0] - gy[0], gz[1] - gy[1]];
        let dz = [z[0] - y[0], z[1] - y[1]];
        let inner = dg[0] * dz[0] + dg[1] * dz[1];
        let ng = (dg[0] * dg[0] + dg[1] * dg[1]).sqrt();
        let nz = (dz[0] * dz[0] + dz[1] * dz[1]).sqrt();
        prop_assert!(inner >= -1e-9 * (1.0 + ng * nz));
        prop_assert!(ng <= p.yosida_lipschitz(l) * nz * (1.0 + 1e-7) + 1e-9);
    }

    #[test]
    fn envelope_below_potential_and_monotone(p in any_potential(), z in vec2(), l1 in 1e-3f64..1.0, l2 in 1e-3f64..1.0) {
        let psi = p.eval_psi(&z).unwrap();
        let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
        let e_lo = p.moreau_eval(&z, lo).unwrap();
        let e_hi = p.moreau_eval(&z, hi).unwrap();
        let tol = 1e-12 * (1.0 + psi);
        prop_assert!(e_lo <= psi + tol);
        prop_assert!(e_hi <= e_lo + tol);
        prop_assert!(e_hi >= p.theta0() - tol);
    }

    #[test]
    fn prox_satisfies_optimality(p in any_potential(), r in 1e-3f64..50.0, l in 1e-3f64..1.0) {
        let s = p.scalar_prox(r, l).unwrap();
        prop_assert!((0.0..=r).contains(&s));
        if s > 0.0 && p.name() != "p-laplace:1" {
            prop_assert!((s + l * p.dtheta(s) - r).abs() < 1e-9 * (1.0 + r));
        }
    }
}
