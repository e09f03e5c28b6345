//! Radial convex potentials `psi(z) = theta(|z|)` together with their proximal maps,
//! Moreau-Yosida envelopes `psi^lambda` and Yosida gradients `phi^lambda`.
//!
//! Everything reduces to the scalar problem
//! `s* = argmin_{s >= 0} theta(s) + (r - s)^2 / (2 lambda)`, whose optimality condition
//! `s + lambda theta'_+(s) = r` is monotone in `s`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Profile {
    PLaplace(f64),
    LogDiffusion,
    MinimalSurface,
    CurveShortening,
    Custom {
        theta: ScalarFn,
        dtheta: ScalarFn,
        d2theta: ScalarFn,
    },
}

/// A potential from the admitted family (or a user profile for experiments).
#[derive(Clone)]
pub struct ConvexPotential {
    name: String,
    profile: Profile,
    growth: f64,
    doubling: f64,
}

impl fmt::Debug for ConvexPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexPotential")
            .field("name", &self.name)
            .field("growth", &self.growth)
            .field("doubling", &self.doubling)
            .finish()
    }
}

impl PartialEq for ConvexPotential {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl fmt::Display for ConvexPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for ConvexPotential {
    type Err = Error;

    /// Parses `p-laplace:<p>`, `log-diffusion`, `minimal-surface` or `curve-shortening`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix("p-laplace:") {
            let p: f64 = p.trim().parse().map_err(|_| Error::UnknownPreset(s.to_string()))?;
            return Self::p_laplace(p);
        }
        match s {
            "log-diffusion" => Ok(Self::log_diffusion()),
            "minimal-surface" => Ok(Self::minimal_surface()),
            "curve-shortening" => Ok(Self::curve_shortening()),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

impl ConvexPotential {
    /// `theta(r) = r^p / p`, `p` in `[1, 2]`; `p = 1` is the total variation flow.
    pub fn p_laplace(p: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "p-Laplace exponent must lie in [1, 2], got {p}"
            )));
        }
        Ok(Self {
            name: format!("p-laplace:{p}"),
            profile: Profile::PLaplace(p),
            growth: 1.0 / p,
            doubling: 2f64.powf(p),
        })
    }

    /// `theta(r) = (1 + r) ln(1 + r) - r`.
    pub fn log_diffusion() -> Self {
        Self {
            name: "log-diffusion".into(),
            profile: Profile::LogDiffusion,
            growth: 0.5,
            doubling: 4.0,
        }
    }

    /// `theta(r) = sqrt(1 + r^2)`. Note `theta(0) = 1`.
    pub fn minimal_surface() -> Self {
        Self {
            name: "minimal-surface".into(),
            profile: Profile::MinimalSurface,
            growth: 1.0,
            doubling: 2.0,
        }
    }

    /// `theta(r) = r atan(r) - ln(1 + r^2) / 2`.
    pub fn curve_shortening() -> Self {
        Self {
            name: "curve-shortening".into(),
            profile: Profile::CurveShortening,
            growth: 0.5,
            doubling: 4.0,
        }
    }

    /// Every catalog entry, with the p-Laplace family sampled at `p = 1, 1.5, 2`.
    pub fn catalog() -> Vec<Self> {
        vec![
            Self::p_laplace(1.0).unwrap(),
            Self::p_laplace(1.5).unwrap(),
            Self::p_laplace(2.0).unwrap(),
            Self::log_diffusion(),
            Self::minimal_surface(),
            Self::curve_shortening(),
        ]
    }

    /// A profile outside the catalog. `dtheta` must be the right derivative.
    pub fn custom(
        name: &str,
        theta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dtheta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2theta: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            profile: Profile::Custom {
                theta: Arc::new(theta),
                dtheta: Arc::new(dtheta),
                d2theta: Arc::new(d2theta),
            },
            growth: f64::NAN,
            doubling: f64::NAN,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Nominal growth constant `C` with `theta(r) <= C (1 + r^2)`.
    pub fn growth_constant(&self) -> f64 {
        self.growth
    }

    /// Nominal doubling constant `K` with `theta(2r) <= K theta(r)`.
    pub fn doubling_constant(&self) -> f64 {
        self.doubling
    }

    pub fn theta(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::PLaplace(p) => {
                if *p == 1.0 {
                    r
                } else if *p == 2.0 {
                    0.5 * r * r
                } else {
                    r.powf(*p) / p
                }
            }
            Profile::LogDiffusion => (1.0 + r) * r.ln_1p() - r,
            Profile::MinimalSurface => (1.0 + r * r).sqrt(),
            Profile::CurveShortening => r * r.atan() - 0.5 * (r * r).ln_1p(),
            Profile::Custom { theta, .. } => theta(r),
        }
    }

    /// Right derivative `theta'_+(r)`.
    pub fn dtheta(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::PLaplace(p) => {
                if *p == 1.0 {
                    1.0
                } else if *p == 2.0 {
                    r
                } else {
                    r.powf(p - 1.0)
                }
            }
            Profile::LogDiffusion => r.ln_1p(),
            Profile::MinimalSurface => r / (1.0 + r * r).sqrt(),
            Profile::CurveShortening => r.atan(),
            Profile::Custom { dtheta, .. } => dtheta(r),
        }
    }

    fn d2theta(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::PLaplace(p) => {
                if *p == 1.0 {
                    0.0
                } else if *p == 2.0 {
                    1.0
                } else {
                    (p - 1.0) * r.powf(p - 2.0)
                }
            }
            Profile::LogDiffusion => 1.0 / (1.0 + r),
            Profile::MinimalSurface => (1.0 + r * r).powf(-1.5),
            Profile::CurveShortening => 1.0 / (1.0 + r * r),
            Profile::Custom { d2theta, .. } => d2theta(r),
        }
    }

    /// `theta(0)`; zero for everything except the minimal surface profile.
    pub fn theta0(&self) -> f64 {
        self.theta(0.0)
    }

    /// `psi(z) = theta(|z|)`.
    pub fn eval_psi(&self, z: &[f64]) -> Result<f64> {
        Ok(self.theta(norm(z)?))
    }

    /// Closed-form prox, when the profile has one.
    fn closed_form_prox(&self, r: f64, lambda: f64) -> Option<f64> {
        match self.profile {
            Profile::PLaplace(1.0) => Some((r - lambda).max(0.0)),
            Profile::PLaplace(2.0) => Some(r / (1.0 + lambda)),
            _ => None,
        }
    }

    /// `argmin_{s >= 0} theta(s) + (r - s)^2 / (2 lambda)`.
    pub fn scalar_prox(&self, r: f64, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prox radius must be finite and >= 0, got {r}"
            )));
        }
        Ok(self.prox_unchecked(r, lambda))
    }

    pub(crate) fn prox_unchecked(&self, r: f64, lambda: f64) -> f64 {
        if let Some(s) = self.closed_form_prox(r, lambda) {
            return s;
        }
        self.numeric_prox(r, lambda)
    }

    /// Golden-section bracketing followed by a safeguarded Newton polish on
    /// `h(s) = s + lambda theta'_+(s) - r`.
    pub fn numeric_prox(&self, r: f64, lambda: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let h = |s: f64| s + lambda * self.dtheta(s) - r;
        if h(0.0) >= 0.0 {
            return 0.0;
        }
        let objective = |s: f64| self.theta(s) + (r - s) * (r - s) / (2.0 * lambda);
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (mut a, mut b) = (0.0, r);
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let (mut fc, mut fd) = (objective(c), objective(d));
        while b - a > 1e-3 * r {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = objective(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = objective(d);
            }
        }
        // Bracket for the root of the monotone h.
        let (mut lo, mut hi) = (0.0, r);
        for s in [a, b] {
            if h(s) < 0.0 {
                lo = f64::max(lo, s);
            } else {
                hi = f64::min(hi, s);
            }
        }
        let mut s = 0.5 * (a + b);
        if !(lo..=hi).contains(&s) {
            s = 0.5 * (lo + hi);
        }
        for _ in 0..100 {
            let hs = h(s);
            if hs == 0.0 {
                return s;
            }
            if hs < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let slope = 1.0 + lambda * self.d2theta(s);
            let mut next = s - hs / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() <= 1e-15 * r.max(1.0) || hi - lo <= 1e-15 * r.max(1.0) {
                return next;
            }
            s = next;
        }
        s
    }

    /// Lipschitz constant of `phi^lambda`: `1 / lambda` for profiles with unbounded
    /// curvature near the origin, `c / (1 + lambda c)` when `theta'' <= c`.
    pub fn yosida_lipschitz(&self, lambda: f64) -> f64 {
        let curvature = match self.profile {
            Profile::PLaplace(2.0) => 1.0,
            Profile::LogDiffusion | Profile::MinimalSurface | Profile::CurveShortening => 1.0,
            _ => f64::INFINITY,
        };
        if curvature.is_finite() {
            curvature / (1.0 + lambda * curvature)
        } else {
            1.0 / lambda
        }
    }

    /// Prox of `lambda psi` at `z`: `scalar_prox(|z|) z / |z|`.
    pub fn prox(&self, z: &[f64], lambda: f64) -> Result<Vec<f64>> {
        check_lambda(lambda)?;
        let r = norm(z)?;
        if r == 0.0 {
            return Ok(vec![0.0; z.len()]);
        }
        let s = self.prox_unchecked(r, lambda);
        Ok(z.iter().map(|v| v * s / r).collect())
    }

    /// `phi^lambda(z) = (z - prox(z)) / lambda`.
    pub fn yosida_grad(&self, z: &[f64], lambda: f64) -> Result<Vec<f64>> {
        check_lambda(lambda)?;
        let r = norm(z)?;
        let g = self.yosida_factor(r, lambda);
        Ok(z.iter().map(|v| g * v).collect())
    }

    /// Scalar `g(r)` with `phi^lambda(z) = g(|z|) z`; finite at `r = 0`.
    #[inline]
    pub(crate) fn yosida_factor(&self, r: f64, lambda: f64) -> f64 {
        if r == 0.0 {
            let c = self.d2theta(0.0);
            return if c.is_finite() {
                c / (1.0 + lambda * c)
            } else {
                1.0 / lambda
            };
        }
        let s = self.prox_unchecked(r, lambda);
        (r - s) / (lambda * r)
    }

    /// Scalar envelope `theta^lambda(r)`.
    pub(crate) fn moreau_scalar(&self, r: f64, lambda: f64) -> f64 {
        let s = self.prox_unchecked(r, lambda);
        self.theta(s) + (r - s) * (r - s) / (2.0 * lambda)
    }

    /// `psi^lambda(z) = inf_y psi(y) + |z - y|^2 / (2 lambda)`.
    pub fn moreau_eval(&self, z: &[f64], lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        Ok(self.moreau_scalar(norm(z)?, lambda))
    }

    /// Scans a geometric `r` grid for the doubling, growth, convexity and
    /// monotonicity properties of the profile.
    pub fn verify_condition_n(&self, r_max: f64, samples: usize) -> ConditionNReport {
        let samples = samples.max(100);
        let grid = geometric_grid(r_max, samples);
        let theta: Vec<f64> = grid.iter().map(|&r| self.theta(r)).collect();
        let theta2: Vec<f64> = grid.iter().map(|&r| self.theta(2.0 * r)).collect();
        let finite = theta.iter().chain(&theta2).all(|v| v.is_finite()) && self.theta0().is_finite();

        let ratios: Vec<f64> = theta
            .iter()
            .zip(&theta2)
            .map(|(t, t2)| if *t > 0.0 { t2 / t } else { f64::NAN })
            .collect();
        let k_hat = ratios.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        let growth: Vec<f64> = grid.iter().zip(&theta).map(|(r, t)| t / (1.0 + r * r)).collect();
        let c_hat = growth.iter().copied().fold(0.0, f64::max);

        let mut convex = true;
        let mut monotone = self.theta0() <= theta[0] + 1e-12 * theta[0].abs().max(1.0);
        let mut prev_slope = (theta[0] - self.theta0()) / grid[0];
        for i in 0..grid.len() - 1 {
            let slope = (theta[i + 1] - theta[i]) / (grid[i + 1] - grid[i]);
            if slope < prev_slope - 1e-9 * prev_slope.abs().max(1.0) {
                convex = false;
            }
            if slope < -1e-12 {
                monotone = false;
            }
            prev_slope = slope;
        }
        let derivative_monotone = grid.windows(2).all(|w| self.dtheta(w[1]) >= self.dtheta(w[0]) - 1e-12);

        // Unbounded growth shows up as a doubling or growth ratio that is still
        // rising across the top of the scan.
        let quarter = samples * 3 / 4;
        let head_k = ratios[..quarter]
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        let tail_k = ratios[quarter..]
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        let tail_growth_ratio = growth[samples - 1] / growth[quarter].max(f64::MIN_POSITIVE);
        let tail_bounded = finite && tail_k <= 1.05 * head_k && tail_growth_ratio <= 1.05;

        ConditionNReport {
            potential: self.name.clone(),
            k_hat,
            c_hat,
            theta0: self.theta0(),
            convex,
            monotone,
            derivative_monotone,
            tail_bounded,
            pass: finite && convex && monotone && derivative_monotone && tail_bounded,
        }
    }

    /// Checks `r theta'_+(r) <= K theta(r)` on the scan grid.
    pub fn subgrad_bound_check(&self, samples: usize) -> SubgradBoundReport {
        let samples = samples.max(100);
        let r_max = 100.0;
        let k_hat = self.verify_condition_n(r_max, samples).k_hat;
        let max_ratio = geometric_grid(r_max, samples)
            .into_iter()
            .filter_map(|r| {
                let t = self.theta(r);
                (t > 0.0).then(|| r * self.dtheta(r) / t)
            })
            .fold(0.0, f64::max);
        SubgradBoundReport {
            potential: self.name.clone(),
            max_ratio,
            k_hat,
            pass: max_ratio.is_finite() && max_ratio <= k_hat * (1.0 + 1e-12),
        }
    }

    /// Fits one constant `C` with `|psi - psi^lambda| <= C lambda (1 + psi)` over a
    /// `(|z|, lambda)` grid and compares it with the pointwise bound
    /// `|psi - psi^lambda| <= lambda theta'_+(|z|)^2`.
    pub fn fit_moreau_constant(&self, radii: &[f64], lambdas: &[f64]) -> Result<MoreauFit> {
        for &l in lambdas {
            check_lambda(l)?;
        }
        let mut c_hat = 0.0f64;
        let mut c_smallest = 0.0f64;
        let mut pointwise_ok = true;
        let mut monotone_in_lambda = true;
        let l_min = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        let mut sorted = lambdas.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for &r in radii {
            let psi = self.theta(r);
            let mut prev = f64::NEG_INFINITY;
            for &l in &sorted {
                let env = self.moreau_scalar(r, l);
                let gap = psi - env;
                let tol = 1e-12 * psi.abs().max(1.0);
                if gap < -tol || env < -tol {
                    pointwise_ok = false;
                }
                if env < prev - tol {
                    monotone_in_lambda = false;
                }
                prev = env;
                let d = self.dtheta(r);
                if gap.abs() > l * d * d + tol {
                    pointwise_ok = false;
                }
                let ratio = gap.abs() / (l * (1.0 + psi));
                c_hat = c_hat.max(ratio);
                if l == l_min {
                    c_smallest = c_smallest.max(ratio);
                }
            }
        }
        Ok(MoreauFit {
            potential: self.name.clone(),
            c_hat,
            c_at_smallest_lambda: c_smallest,
            pointwise_ok,
            monotone_in_lambda,
        })
    }
}

/// Result of [`ConvexPotential::verify_condition_n`].
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ConditionNReport {
    pub potential: String,
    /// Measured doubling constant `max theta(2r) / theta(r)`.
    pub k_hat: f64,
    /// Measured growth constant `max theta(r) / (1 + r^2)`.
    pub c_hat: f64,
    pub theta0: f64,
    pub convex: bool,
    pub monotone: bool,
    pub derivative_monotone: bool,
    pub tail_bounded: bool,
    pub pass: bool,
}

/// Result of [`ConvexPotential::subgrad_bound_check`].
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SubgradBoundReport {
    pub potential: String,
    pub max_ratio: f64,
    pub k_hat: f64,
    pub pass: bool,
}

/// Result of [`ConvexPotential::fit_moreau_constant`].
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MoreauFit {
    pub potential: String,
    pub c_hat: f64,
    pub c_at_smallest_lambda: f64,
    pub pointwise_ok: bool,
    pub monotone_in_lambda: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")))
    }
}

fn norm(z: &[f64]) -> Result<f64> {
    if let Some(index) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(z.iter().map(|v| v * v).sum::<f64>().sqrt())
}

fn geometric_grid(r_max: f64, samples: usize) -> Vec<f64> {
    let r_min = r_max * 1e-4;
    let ratio = (r_max / r_min).powf(1.0 / (samples - 1) as f64);
    (0..samples).map(|i| r_min * ratio.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_values() {
        let tv = ConvexPotential::p_laplace(1.0).unwrap();
        assert_eq!(tv.eval_psi(&[3.0, 4.0]).unwrap(), 5.0);
        let heat = ConvexPotential::p_laplace(2.0).unwrap();
        assert!((heat.eval_psi(&[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let ms = ConvexPotential::minimal_surface();
        assert_eq!(ms.eval_psi(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(tv.eval_psi(&[f64::NAN]).is_err());
    }

    #[test]
    fn psi_is_radial() {
        for p in ConvexPotential::catalog() {
            let a = p.eval_psi(&[0.6, 0.8]).unwrap();
            let b = p.eval_psi(&[-1.0, 0.0]).unwrap();
            assert!((a - b).abs() < 1e-14, "{}", p.name());
        }
    }

    #[test]
    fn parse_keys() {
        for p in ConvexPotential::catalog() {
            let q: ConvexPotential = p.name().parse().unwrap();
            assert_eq!(p, q);
        }
        assert!("p-laplace:3".parse::<ConvexPotential>().is_err());
        assert!("porous-medium".parse::<ConvexPotential>().is_err());
    }

    #[test]
    fn prox_rejects_bad_lambda() {
        let p = ConvexPotential::log_diffusion();
        assert!(p.scalar_prox(1.0, 0.0).is_err());
        assert!(p.scalar_prox(1.0, -1.0).is_err());
        assert!(p.yosida_grad(&[1.0], 0.0).is_err());
        assert!(p.moreau_eval(&[1.0], -2.0).is_err());
    }

    #[test]
    fn prox_at_origin_is_zero() {
        for p in ConvexPotential::catalog() {
            assert_eq!(p.scalar_prox(0.0, 0.3).unwrap(), 0.0);
            assert_eq!(p.yosida_grad(&[0.0, 0.0], 0.3).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn tv_yosida_is_huber_gradient() {
        let tv = ConvexPotential::p_laplace(1.0).unwrap();
        let l = 0.5;
        let small = tv.yosida_grad(&[0.3, 0.0], l).unwrap();
        assert!((small[0] - 0.6).abs() < 1e-15);
        let big = tv.yosida_grad(&[3.0, 4.0], l).unwrap();
        assert!((big[0] - 0.6).abs() < 1e-15 && (big[1] - 0.8).abs() < 1e-15);
        assert!((tv.moreau_eval(&[2.0], 1.0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_envelope() {
        let q = ConvexPotential::p_laplace(2.0).unwrap();
        let z = [0.7, -1.1];
        let l = 0.25;
        let r2 = z[0] * z[0] + z[1] * z[1];
        assert!((q.moreau_eval(&z, l).unwrap() - r2 / (2.0 * (1.0 + l))).abs() < 1e-15);
        let g = q.yosida_grad(&z, l).unwrap();
        assert!((g[1] - z[1] / (1.0 + l)).abs() < 1e-15);
    }

    #[test]
    fn numeric_prox_matches_closed_forms() {
        let tv = ConvexPotential::p_laplace(1.0).unwrap();
        let q = ConvexPotential::p_laplace(2.0).unwrap();
        for &r in &[0.01, 0.5, 1.0, 3.0, 40.0] {
            for &l in &[1e-3, 0.1, 1.0, 5.0] {
                assert!((tv.numeric_prox(r, l) - (r - l).max(0.0)).abs() < 1e-12);
                assert!((q.numeric_prox(r, l) - r / (1.0 + l)).abs() < 1e-12 * r.max(1.0));
            }
        }
    }

    #[test]
    fn condition_n_for_catalog() {
        for p in ConvexPotential::catalog() {
            let rep = p.verify_condition_n(100.0, 400);
            assert!(rep.pass, "{rep:?}");
            assert!(rep.k_hat <= p.doubling_constant() * (1.0 + 1e-9) + 1e-12, "{rep:?}");
            assert!(rep.c_hat <= p.growth_constant() * (1.0 + 1e-9), "{rep:?}");
        }
    }

    #[test]
    fn p_laplace_doubling_is_two_to_the_p() {
        for p in [1.0, 1.25, 1.5, 2.0] {
            let rep = ConvexPotential::p_laplace(p).unwrap().verify_condition_n(10.0, 200);
            assert!((rep.k_hat - 2f64.powf(p)).abs() < 1e-9);
        }
    }

    #[test]
    fn exponential_fails_condition_n() {
        let e = ConvexPotential::custom("exp", |r: f64| r.exp_m1(), |r: f64| r.exp(), |r: f64| r.exp());
        let rep = e.verify_condition_n(100.0, 200);
        assert!(!rep.pass);
        assert!(!rep.tail_bounded);
    }

    #[test]
    fn concave_profile_fails_condition_n() {
        let s = ConvexPotential::custom(
            "sqrt",
            |r: f64| r.sqrt(),
            |r: f64| 0.5 / r.sqrt(),
            |r: f64| -0.25 * r.powf(-1.5),
        );
        let rep = s.verify_condition_n(10.0, 200);
        assert!(!rep.convex && !rep.pass);
    }

    #[test]
    fn subgradient_bound() {
        let q = ConvexPotential::p_laplace(2.0).unwrap().subgrad_bound_check(200);
        assert!((q.max_ratio - 2.0).abs() < 1e-12 && q.pass);
        let tv = ConvexPotential::p_laplace(1.0).unwrap().subgrad_bound_check(200);
        assert!((tv.max_ratio - 1.0).abs() < 1e-12 && tv.pass);
        let cs = ConvexPotential::curve_shortening().subgrad_bound_check(200);
        assert!(cs.pass && cs.max_ratio <= cs.k_hat, "{cs:?}");
    }
}
