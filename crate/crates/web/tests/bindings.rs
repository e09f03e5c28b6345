use std::f64::consts::PI;

use serde_json::Value;
use svi_torus_web::{condition_map_json, moreau_curve_json, simulate_1d_json};

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn heat_path_without_noise_decays_at_the_exact_rate() {
    let lambda = 1e-3;
    let out: Value =
        serde_json::from_str(&simulate_1d_json(64, "p-laplace:2", "sine", 0.0, lambda, 1e-6, 1e-5, 0.02, 1).unwrap())
            .unwrap();
    let norm = f64s(&out["norm_h2"]);
    let t = f64s(&out["t"]);
    let last = *t.last().unwrap();
    let amp = (-4.0 * PI * PI * last / (1.0 + lambda)).exp();
    let exact = 0.5 * amp * amp;
    let got = *norm.last().unwrap();
    assert!((got - exact).abs() / exact < 2e-3, "{got} vs {exact}");
    assert_eq!(f64s(&out["x"]).len(), 64);
}

#[test]
fn moreau_envelope_lies_below_theta() {
    let out: Value = serde_json::from_str(&moreau_curve_json("p-laplace:1", 0.1, 2.0, 50).unwrap()).unwrap();
    let theta = f64s(&out["theta"]);
    let env = f64s(&out["envelope"]);
    let r = f64s(&out["r"]);
    assert_eq!(r.len(), 50);
    for i in 0..r.len() {
        assert!(env[i] <= theta[i] + 1e-12);
    }
    // Huber form of |r|: r^2/(2 lambda) inside, r - lambda/2 outside.
    assert!((env[49] - (2.0 - 0.05)).abs() < 1e-9);
}

#[test]
fn condition_map_flags_the_perturbed_preset() {
    let ok: Value = serde_json::from_str(&condition_map_json(32, "paper-2.5", "", "").unwrap()).unwrap();
    let bad: Value = serde_json::from_str(&condition_map_json(32, "paper-2.5-perturbed", "", "").unwrap()).unwrap();
    let pass = |v: &Value, c: &str| {
        v.as_array()
            .unwrap()
            .iter()
            .find(|r| r["condition"] == c)
            .map(|r| r["pass"].as_bool().unwrap())
            .unwrap()
    };
    assert!(pass(&ok, "R"));
    assert!(!pass(&bad, "R"));
    let custom: Value =
        serde_json::from_str(&condition_map_json(32, "", "identity", "expr:sin(1,0),0").unwrap()).unwrap();
    assert!(!pass(&custom, "D"));
}

#[test]
fn bad_inputs_are_errors() {
    assert!(simulate_1d_json(30, "p-laplace:2", "sine", 0.0, 1e-3, 1e-6, 1e-5, 0.01, 1).is_err());
    assert!(moreau_curve_json("nope", 0.1, 1.0, 10).is_err());
    assert!(condition_map_json(32, "nope", "", "").is_err());
}
