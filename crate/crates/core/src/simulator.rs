//! Euler-Maruyama integration of
//! `dX = [div(a^T phi^lambda(a grad X)) + eps L^a X + J L^b J X / 2] dt + <b grad J X, dW>`
//! with `J = J_delta`, driven by seeded Brownian paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{compensated_sum, random_band_limited, PeriodicGrid, ScalarField};
use crate::operators::OperatorSet;
use crate::potentials::ConvexPotential;

/// Blow-up guard: a step fails once `|X|_H` exceeds this multiple of `|x|_H`.
pub const BLOW_UP_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Every term explicit.
    #[default]
    Explicit,
    /// `eps L^a` implicit through a CG solve, the rest explicit.
    SemiImplicitEps,
    /// Explicit increment filtered by `(1 - dt sigma Laplace)^{-1}`, which is
    /// unconditionally mean-square stable for `sigma` at least half the stiffness.
    Stabilized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub delta: f64,
    #[serde(default)]
    pub epsilon: f64,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "one")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Overrides the automatic `sigma` of the stabilized scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilization: Option<f64>,
    /// Times at which full states are kept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
}

fn one() -> usize {
    1
}

impl SolverConfig {
    pub fn new(lambda: f64, delta: f64, epsilon: f64, dt: f64, horizon: f64) -> Self {
        Self {
            lambda,
            delta,
            epsilon,
            dt,
            horizon,
            paths: 1,
            seed: 0,
            scheme: Scheme::Explicit,
            stabilization: None,
            snapshot_times: Vec::new(),
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_paths(mut self, paths: usize, seed: u64) -> Self {
        self.paths = paths;
        self.seed = seed;
        self
    }

    /// Checks the invariants and returns the step count `T / dt`.
    pub fn validate(&self) -> Result<usize> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be > 0, got {}", self.delta));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be >= 0, got {}", self.horizon));
        }
        if self.horizon > 0.0 && self.dt > self.horizon {
            return bad(format!("dt = {} exceeds the horizon {}", self.dt, self.horizon));
        }
        if self.paths == 0 {
            return bad("at least one path is required".into());
        }
        if let Some(s) = self.stabilization {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("stabilization must be >= 0, got {s}"));
            }
        }
        let steps = (self.horizon / self.dt).round();
        if (steps * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(self.dt) {
            return bad(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt));
        }
        for &t in &self.snapshot_times {
            let k = (t / self.dt).round();
            if t < 0.0 || t > self.horizon + 1e-12 || (k * self.dt - t).abs() > 1e-9 * self.dt.max(t) {
                return bad(format!("snapshot time {t} is not on the step grid"));
            }
        }
        Ok(steps as usize)
    }

    pub fn steps(&self) -> Result<usize> {
        self.validate()
    }

    /// `h^2 / (4 (sup|a|^2 Lip(phi^lambda) + eps sup|a|^2))`, with `Lip = 1 / lambda`.
    pub fn stability_bound(&self, ops: &OperatorSet) -> f64 {
        let h = ops.grid().spacing();
        let a2 = ops.coeffs().sup_a2();
        h * h / (4.0 * (a2 / self.lambda + self.epsilon * a2))
    }

    /// Validation warnings that do not prevent a run.
    pub fn warnings(&self, ops: &OperatorSet) -> Vec<String> {
        let mut w = Vec::new();
        let bound = self.stability_bound(ops);
        if self.scheme != Scheme::Stabilized && self.dt > bound {
            w.push(format!(
                "dt = {:.3e} exceeds the explicit stability bound {bound:.3e}; the blow-up guard may stop the run",
                self.dt
            ));
        }
        w
    }

    /// `sigma` of the stabilized scheme: half of
    /// `sup|a|^2 (Lip(phi^lambda) + eps) + sup|b|^2 / 2`, unless overridden.
    pub fn sigma(&self, ops: &OperatorSet, pot: &ConvexPotential) -> f64 {
        self.stabilization.unwrap_or_else(|| {
            let c = ops.coeffs();
            0.5 * (c.sup_a2() * (pot.yosida_lipschitz(self.lambda) + self.epsilon) + 0.5 * c.sup_b2())
        })
    }
}

/// Brownian increments for one path, `steps x channels`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    dt: f64,
    channels: usize,
    increments: Vec<f64>,
}

impl NoisePath {
    /// Increments from the stream `(seed, path)`: i.i.d. `N(0, dt)` per channel.
    pub fn generate(seed: u64, path: u64, channels: usize, steps: usize, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        let sd = dt.sqrt();
        let increments = (0..steps * channels)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        Self {
            dt,
            channels,
            increments,
        }
    }

    pub fn zero(channels: usize, steps: usize, dt: f64) -> Self {
        Self {
            dt,
            channels,
            increments: vec![0.0; steps * channels],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.increments.len().checked_div(self.channels).unwrap_or(0)
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.channels..(step + 1) * self.channels]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Sums `factor` consecutive increments: the same Brownian path on a grid with
    /// step `factor * dt`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(Error::InvalidParameter(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let c = self.channels;
        let steps = self.steps() / factor;
        let mut increments = vec![0.0; steps * c];
        for k in 0..steps {
            for i in 0..c {
                increments[k * c + i] = compensated_sum((0..factor).map(|j| self.increments[(k * factor + j) * c + i]));
            }
        }
        Ok(Self {
            dt: self.dt * factor as f64,
            channels: c,
            increments,
        })
    }

    /// `W` at the end of `step` increments.
    pub fn brownian_at(&self, step: usize) -> Vec<f64> {
        (0..self.channels)
            .map(|i| compensated_sum((0..step).map(|k| self.increments[k * self.channels + i])))
            .collect()
    }
}

/// Statistics of one state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub t: f64,
    pub norm_h2: f64,
    /// `Psi^lambda(X) - theta(0)`.
    pub psi_lambda: f64,
    pub form_a: f64,
    pub mean: f64,
    /// `|L^a X|_H^2`.
    pub la_norm2: f64,
}

impl StepStats {
    pub fn compute(ops: &OperatorSet, pot: &ConvexPotential, lambda: f64, u: &[f64], t: f64) -> Self {
        let g = ops.grid();
        let vol = g.cell_volume();
        let (psi_lambda, form_a, la_norm2) = ops.energies(u, Some(pot), lambda);
        Self {
            t,
            norm_h2: vol * compensated_sum(u.iter().map(|v| v * v)),
            psi_lambda,
            form_a,
            mean: vol * compensated_sum(u.iter().copied()),
            la_norm2,
        }
    }
}

/// One simulated path.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub initial: ScalarField,
    pub stats: Vec<StepStats>,
    pub snapshots: Vec<(f64, ScalarField)>,
    pub final_state: ScalarField,
}

/// One member of a coupled run.
#[derive(Clone, Copy)]
pub struct Member<'a> {
    pub x: &'a ScalarField,
    pub cfg: &'a SolverConfig,
    pub ops: &'a OperatorSet,
    pub pot: &'a ConvexPotential,
}

struct Stepper<'a> {
    m: Member<'a>,
    sigma: f64,
    limit: f64,
}

impl Stepper<'_> {
    fn advance(&self, u: &[f64], dw: &[f64]) -> Result<Vec<f64>> {
        let Member { cfg, ops, pot, .. } = self.m;
        let dt = cfg.dt;
        let eps_explicit = if cfg.scheme == Scheme::SemiImplicitEps {
            0.0
        } else {
            cfg.epsilon
        };
        let g = ops.grid();
        let spec = g.forward_raw(u);
        let parts = ops.drift_parts(&spec, pot, cfg.lambda, cfg.delta, eps_explicit)?;
        let mut inc = parts.total(true);
        inc.iter_mut().for_each(|v| *v *= dt);
        if dw.iter().any(|w| *w != 0.0) {
            let mut noise = vec![0.0; u.len()];
            for (chan, w) in parts.noise.iter().zip(dw) {
                noise.iter_mut().zip(chan).for_each(|(v, c)| *v += c * w);
            }
            inc.iter_mut().zip(g.forward_raw(&noise)).for_each(|(v, n)| *v += n);
        }
        let next = match cfg.scheme {
            Scheme::Explicit => u.iter().zip(g.inverse_raw(inc)).map(|(a, b)| a + b).collect(),
            Scheme::SemiImplicitEps => {
                let rhs: Vec<_> = spec.iter().zip(&inc).map(|(a, b)| a + b).collect();
                g.inverse_raw(ops.solve_spec(&rhs, dt * cfg.epsilon, 0.0)?)
            }
            Scheme::Stabilized => {
                let s = dt * self.sigma;
                inc.iter_mut().zip(g.symbol()).for_each(|(v, m)| *v /= 1.0 - s * m);
                u.iter().zip(g.inverse_raw(inc)).map(|(a, b)| a + b).collect()
            }
        };
        Ok(next)
    }

    fn guard(&self, step: usize, u: &[f64]) -> Result<()> {
        let vol = self.m.ops.grid().cell_volume();
        let norm = (vol * u.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if !norm.is_finite() || norm > self.limit {
            return Err(Error::BlowUp {
                step,
                norm,
                limit: self.limit,
            });
        }
        Ok(())
    }
}

/// Advances one state by one step with the given Brownian increment.
pub fn step(
    x: &ScalarField,
    dw: &[f64],
    cfg: &SolverConfig,
    ops: &OperatorSet,
    pot: &ConvexPotential,
) -> Result<ScalarField> {
    ops.grid().check(x.grid())?;
    cfg.validate()?;
    if dw.len() != ops.coeffs().noise_dim() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} Brownian increments, got {}",
            ops.coeffs().noise_dim(),
            dw.len()
        )));
    }
    let m = Member { x, cfg, ops, pot };
    let stepper = Stepper {
        m,
        sigma: cfg.sigma(ops, pot),
        limit: f64::INFINITY,
    };
    Ok(ScalarField::from_raw(ops.grid(), stepper.advance(x.values(), dw)?))
}

/// Runs several members in lockstep on one noise path. `observe` sees every state
/// after `step` steps (starting at 0).
pub fn simulate_coupled(
    members: &[Member<'_>],
    noise: &NoisePath,
    mut observe: impl FnMut(usize, &[Vec<f64>]) -> Result<()>,
) -> Result<()> {
    let Some(first) = members.first() else {
        return Ok(());
    };
    let steps = first.cfg.validate()?;
    for m in members {
        m.ops.grid().check(m.x.grid())?;
        first.ops.grid().check(m.ops.grid())?;
        if m.cfg.validate()? != steps || m.cfg.dt != first.cfg.dt {
            return Err(Error::InvalidParameter(
                "coupled members need identical time grids".into(),
            ));
        }
        if m.ops.coeffs().noise_dim() != noise.channels() {
            return Err(Error::ShapeMismatch(format!(
                "noise path has {} channels, coefficients need {}",
                noise.channels(),
                m.ops.coeffs().noise_dim()
            )));
        }
    }
    if noise.steps() < steps || (noise.dt() - first.cfg.dt).abs() > 1e-12 * first.cfg.dt {
        return Err(Error::InvalidParameter(format!(
            "noise path ({} steps of {}) does not cover {steps} steps of {}",
            noise.steps(),
            noise.dt(),
            first.cfg.dt
        )));
    }
    let steppers: Vec<Stepper> = members
        .iter()
        .map(|&m| Stepper {
            m,
            sigma: m.cfg.sigma(m.ops, m.pot),
            limit: BLOW_UP_FACTOR * m.x.norm_h(),
        })
        .collect();
    let mut states: Vec<Vec<f64>> = members.iter().map(|m| m.x.values().to_vec()).collect();
    observe(0, &states)?;
    for k in 0..steps {
        let dw = noise.increment(k);
        for (s, st) in states.iter_mut().zip(&steppers) {
            let next = st.advance(s, dw).map_err(|e| Error::AtStep {
                step: k + 1,
                source: Box::new(e),
            })?;
            st.guard(k + 1, &next)?;
            *s = next;
        }
        observe(k + 1, &states)?;
    }
    Ok(())
}

fn record(
    cfg: &SolverConfig,
    ops: &OperatorSet,
    pot: &ConvexPotential,
    step: usize,
    u: &[f64],
    stats: &mut Vec<StepStats>,
    snapshots: &mut Vec<(f64, ScalarField)>,
) {
    let t = step as f64 * cfg.dt;
    stats.push(StepStats::compute(ops, pot, cfg.lambda, u, t));
    if cfg
        .snapshot_times
        .iter()
        .any(|&s| (s / cfg.dt).round() as usize == step)
    {
        snapshots.push((t, ScalarField::from_raw(ops.grid(), u.to_vec())));
    }
}

/// One path driven by `noise`; statistics are recorded at every step.
pub fn simulate(
    x: &ScalarField,
    cfg: &SolverConfig,
    ops: &OperatorSet,
    pot: &ConvexPotential,
    noise: &NoisePath,
) -> Result<Trajectory> {
    let mut stats = Vec::new();
    let mut snapshots = Vec::new();
    let mut last = x.values().to_vec();
    simulate_coupled(&[Member { x, cfg, ops, pot }], noise, |k, s| {
        record(cfg, ops, pot, k, &s[0], &mut stats, &mut snapshots);
        last.clone_from(&s[0]);
        Ok(())
    })?;
    Ok(Trajectory {
        initial: x.clone(),
        stats,
        snapshots,
        final_state: ScalarField::from_raw(ops.grid(), last),
    })
}

/// Path `index` of the ensemble defined by `cfg.seed`.
pub fn noise_for(cfg: &SolverConfig, ops: &OperatorSet, index: usize) -> Result<NoisePath> {
    Ok(NoisePath::generate(
        cfg.seed,
        index as u64,
        ops.coeffs().noise_dim(),
        cfg.validate()?,
        cfg.dt,
    ))
}

/// Two initial states driven by the same noise.
pub fn simulate_pair(
    x: &ScalarField,
    y: &ScalarField,
    noise: &NoisePath,
    cfg: &SolverConfig,
    ops: &OperatorSet,
    pot: &ConvexPotential,
) -> Result<(Trajectory, Trajectory)> {
    let members = [Member { x, cfg, ops, pot }, Member { x: y, cfg, ops, pot }];
    type Recorded = (Vec<StepStats>, Vec<(f64, ScalarField)>, Vec<f64>);
    let mut out: Vec<Recorded> = vec![(Vec::new(), Vec::new(), Vec::new()); 2];
    simulate_coupled(&members, noise, |k, states| {
        for (o, s) in out.iter_mut().zip(states) {
            record(cfg, ops, pot, k, s, &mut o.0, &mut o.1);
            o.2.clone_from(s);
        }
        Ok(())
    })?;
    let mut it = out
        .into_iter()
        .zip([x, y])
        .map(|((stats, snapshots, last), init)| Trajectory {
            initial: init.clone(),
            stats,
            snapshots,
            final_state: ScalarField::from_raw(ops.grid(), last),
        });
    Ok((it.next().unwrap(), it.next().unwrap()))
}

/// Evaluates `f` on path indices `0..paths`, in parallel when the `parallel`
/// feature is enabled. Results keep index order.
pub fn map_paths<T: Send>(paths: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..paths).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..paths).map(f).collect()
    }
}

/// Ensemble mean and standard error of every recorded statistic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleRow {
    pub t: f64,
    pub norm_h2: f64,
    pub psi_lambda: f64,
    pub form_a: f64,
    pub mean: f64,
    pub stderr_norm_h2: f64,
    pub stderr_psi_lambda: f64,
    pub stderr_form_a: f64,
    pub stderr_mean: f64,
}

/// Sample mean and standard error of the mean, reduced in index order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Runs `cfg.paths` independent paths.
pub fn run_ensemble(
    x: &ScalarField,
    cfg: &SolverConfig,
    ops: &OperatorSet,
    pot: &ConvexPotential,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    map_paths(cfg.paths, |i| simulate(x, cfg, ops, pot, &noise_for(cfg, ops, i)?))
}

/// Per-time ensemble statistics.
pub fn ensemble_rows(trajs: &[Trajectory]) -> Vec<EnsembleRow> {
    let Some(first) = trajs.first() else {
        return Vec::new();
    };
    (0..first.stats.len())
        .map(|k| {
            let col = |f: fn(&StepStats) -> f64| -> (f64, f64) {
                let v: Vec<f64> = trajs.iter().map(|t| f(&t.stats[k])).collect();
                mean_stderr(&v)
            };
            let (n, sn) = col(|s| s.norm_h2);
            let (p, sp) = col(|s| s.psi_lambda);
            let (a, sa) = col(|s| s.form_a);
            let (m, sm) = col(|s| s.mean);
            EnsembleRow {
                t: first.stats[k].t,
                norm_h2: n,
                psi_lambda: p,
                form_a: a,
                mean: m,
                stderr_norm_h2: sn,
                stderr_psi_lambda: sp,
                stderr_form_a: sa,
                stderr_mean: sm,
            }
        })
        .collect()
}

/// Initial data presets:
/// `sine[:k]`, `mode:k1[,k2]`, `random:<S-norm>[:<max mode>]`, `indicator`,
/// `constant:<c>` and `zero`.
pub fn initial_condition(grid: &PeriodicGrid, key: &str, seed: u64) -> Result<ScalarField> {
    use std::f64::consts::PI;
    let key = key.trim();
    let (base, args) = match key.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (key, None),
    };
    let unknown = || Error::UnknownPreset(key.to_string());
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(unknown)
    };
    let d = grid.dim();
    match (base, args) {
        ("zero", None) => Ok(grid.zeros()),
        ("constant", Some(c)) => Ok(grid.constant(num(c)?)),
        ("sine", _) => {
            let k = match args {
                Some(a) => num(a)?,
                None => 1.0,
            };
            Ok(grid.sample(|x| (2.0 * PI * k * x[0]).sin()))
        }
        ("mode", Some(a)) => {
            let ks: Vec<f64> = a.split(',').map(num).collect::<Result<_>>()?;
            if ks.len() != d {
                return Err(unknown());
            }
            Ok(grid.sample(|x| (2.0 * PI * (0..d).map(|j| ks[j] * x[j]).sum::<f64>()).sin()))
        }
        ("random", Some(a)) => {
            let mut parts = a.split(':');
            let s_norm = num(parts.next().unwrap_or(""))?;
            let max_mode = match parts.next() {
                Some(m) => m.trim().parse::<usize>().map_err(|_| unknown())?,
                None => grid.n() / 4,
            };
            if parts.next().is_some() || max_mode == 0 || max_mode > grid.n() / 2 - 1 {
                return Err(unknown());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(random_band_limited(grid, max_mode, &mut rng).scale(s_norm))
        }
        ("indicator", None) => {
            let w = 0.05;
            let bump = |t: f64| 0.5 * (((t - 0.25) / w).tanh() - ((t - 0.75) / w).tanh());
            Ok(grid.sample(|x| (0..d).map(|j| bump(x[j])).product()))
        }
        _ => Err(unknown()),
    }
}
