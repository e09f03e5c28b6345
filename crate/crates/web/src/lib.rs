//! WebAssembly bindings for the static demo page in `www/`. Every export
//! returns a JSON string; the `*_json` functions are the same computations
//! callable from native code.

use serde::Serialize;
use svi_torus::simulator::{initial_condition, noise_for, simulate, Scheme, SolverConfig};
use svi_torus::{CoefficientSet, ConvexPotential, PeriodicGrid, Result};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Simulation {
    x: Vec<f64>,
    initial: Vec<f64>,
    final_state: Vec<f64>,
    t: Vec<f64>,
    norm_h2: Vec<f64>,
    psi_lambda: Vec<f64>,
}

/// One path of the 1D flow with `a = 1`, `b = beta`, stabilized scheme.
#[allow(clippy::too_many_arguments)]
pub fn simulate_1d_json(
    n: usize,
    potential: &str,
    initial: &str,
    beta: f64,
    lambda: f64,
    delta: f64,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<String> {
    let grid = PeriodicGrid::new(1, n)?;
    let coeffs = CoefficientSet::from_keys(&grid, "identity", &format!("constant:{beta}"))?;
    let ops = svi_torus::operators::OperatorSet::new(coeffs)?;
    let pot: ConvexPotential = potential.parse()?;
    let x = initial_condition(&grid, initial, seed)?;
    let cfg = SolverConfig::new(lambda, delta, 0.0, dt, horizon)
        .with_scheme(Scheme::Stabilized)
        .with_paths(1, seed);
    let noise = noise_for(&cfg, &ops, 0)?;
    let tr = simulate(&x, &cfg, &ops, &pot, &noise)?;
    let stride = (tr.stats.len() / 400).max(1);
    let kept: Vec<_> = tr.stats.iter().step_by(stride).collect();
    let out = Simulation {
        x: (0..n).map(|i| i as f64 / n as f64).collect(),
        initial: tr.initial.values().to_vec(),
        final_state: tr.final_state.values().to_vec(),
        t: kept.iter().map(|s| s.t).collect(),
        norm_h2: kept.iter().map(|s| s.norm_h2).collect(),
        psi_lambda: kept.iter().map(|s| s.psi_lambda).collect(),
    };
    Ok(serde_json::to_string(&out).expect("finite numbers serialize"))
}

#[derive(Serialize)]
struct MoreauCurve {
    r: Vec<f64>,
    theta: Vec<f64>,
    envelope: Vec<f64>,
    yosida: Vec<f64>,
}

/// `theta(r)`, its Moreau envelope and Yosida derivative on `count` radii in `[0, r_max]`.
pub fn moreau_curve_json(potential: &str, lambda: f64, r_max: f64, count: usize) -> Result<String> {
    let pot: ConvexPotential = potential.parse()?;
    let count = count.max(2);
    let r: Vec<f64> = (0..count).map(|i| r_max * i as f64 / (count - 1) as f64).collect();
    let mut out = MoreauCurve {
        r: r.clone(),
        theta: Vec::with_capacity(count),
        envelope: Vec::with_capacity(count),
        yosida: Vec::with_capacity(count),
    };
    for &v in &r {
        out.theta.push(pot.theta(v) - pot.theta0());
        out.envelope.push(pot.moreau_eval(&[v], lambda)? - pot.theta0());
        out.yosida.push(pot.yosida_grad(&[v], lambda)?[0]);
    }
    Ok(serde_json::to_string(&out).expect("finite numbers serialize"))
}

/// Structural condition reports for a 2D coefficient preset or `a` / `b` keys.
pub fn condition_map_json(n: usize, preset: &str, a: &str, b: &str) -> Result<String> {
    let grid = PeriodicGrid::new(2, n)?;
    let coeffs = if preset.is_empty() {
        CoefficientSet::from_keys(&grid, a, b)?
    } else {
        CoefficientSet::preset(&grid, preset)?
    };
    let mut reports = coeffs.check_all();
    reports.push(coeffs.check_killing());
    Ok(serde_json::to_string(&reports).expect("finite numbers serialize"))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_1d(
    n: usize,
    potential: &str,
    initial: &str,
    beta: f64,
    lambda: f64,
    delta: f64,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> std::result::Result<String, JsError> {
    js(simulate_1d_json(
        n, potential, initial, beta, lambda, delta, dt, horizon, seed,
    ))
}

#[wasm_bindgen]
pub fn moreau_curve(potential: &str, lambda: f64, r_max: f64, count: usize) -> std::result::Result<String, JsError> {
    js(moreau_curve_json(potential, lambda, r_max, count))
}

#[wasm_bindgen]
pub fn condition_map(n: usize, preset: &str, a: &str, b: &str) -> std::result::Result<String, JsError> {
    js(condition_map_json(n, preset, a, b))
}
