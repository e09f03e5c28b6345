//! Dirichlet operators `L^a u = div(a^T a grad u)`, `L^b`, the resolvents
//! `J_delta = (1 - delta L^a)^{-1}` and `G_beta = (beta - L^a)^{-1}`, the noise map
//! `B^delta` and the regularized drift.

use std::sync::Arc;

use num_complex::Complex64;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::fields::{compensated_sum, PeriodicGrid, ScalarField, VectorField};
use crate::potentials::ConvexPotential;

pub const DEFAULT_CG_TOL: f64 = 1e-10;
pub const DEFAULT_CG_MAX_ITER: usize = 500;

/// Operators built on one coefficient set.
#[derive(Clone, Debug)]
pub struct OperatorSet {
    coeffs: Arc<CoefficientSet>,
    cg_tol: f64,
    cg_max_iter: usize,
    /// Row-major pointwise `a^T a` and `b^T b`.
    gram_a: Vec<Vec<f64>>,
    gram_b: Vec<Vec<f64>>,
    /// Row-major pointwise `a`.
    a: Vec<Vec<f64>>,
    /// `|2 pi k|^2_{mean a^T a}` per spectral index, for the preconditioner.
    mean_symbol: Vec<f64>,
    constant: bool,
}

/// Spectra of the drift terms `div(a^T phi^lambda(a grad u))`, `eps L^a u` and
/// `J L^b J u / 2`, plus the noise coefficients that share the resolvent solve.
#[derive(Clone, Debug)]
pub(crate) struct DriftParts {
    pub nonlinear: Vec<Complex64>,
    pub viscous: Vec<Complex64>,
    pub correction: Vec<Complex64>,
    /// Physical `<b_i, grad J_delta u>` per channel.
    pub noise: Vec<Vec<f64>>,
}

impl DriftParts {
    /// Spectrum of the full drift, or of the drift without the noise correction.
    pub fn total(&self, with_correction: bool) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = self.nonlinear.iter().zip(&self.viscous).map(|(a, b)| a + b).collect();
        if with_correction {
            out.iter_mut().zip(&self.correction).for_each(|(o, c)| *o += c);
        }
        out
    }
}

impl OperatorSet {
    /// Requires `kappa > 0`; `cg_tol` must be below `1e-8`.
    pub fn new(coeffs: CoefficientSet) -> Result<Self> {
        Self::with_tolerances(Arc::new(coeffs), DEFAULT_CG_TOL, DEFAULT_CG_MAX_ITER)
    }

    pub fn with_tolerances(coeffs: Arc<CoefficientSet>, cg_tol: f64, cg_max_iter: usize) -> Result<Self> {
        if !coeffs.check_e().pass {
            return Err(Error::InvalidParameter(format!(
                "coefficient a is not elliptic (kappa = {:.3e})",
                coeffs.kappa()
            )));
        }
        if !(cg_tol > 0.0 && cg_tol < 1e-8) {
            return Err(Error::InvalidParameter(format!(
                "CG tolerance must lie in (0, 1e-8), got {cg_tol}"
            )));
        }
        if cg_max_iter == 0 {
            return Err(Error::InvalidParameter("CG iteration cap must be positive".into()));
        }
        let grid = coeffs.grid().clone();
        let d = grid.dim();
        let raw = |m: &crate::fields::MatrixField| -> Vec<Vec<f64>> {
            m.components().iter().map(|c| c.values().to_vec()).collect()
        };
        let mean = coeffs.mean_gram_a();
        let mean_symbol = (0..grid.len())
            .map(|h| {
                let mut s = 0.0;
                for j in 0..d {
                    for l in 0..d {
                        s += mean[j * d + l] * grid.wave(j)[h] * grid.wave(l)[h];
                    }
                }
                s
            })
            .collect();
        Ok(Self {
            gram_a: raw(coeffs.gram_a()),
            gram_b: raw(coeffs.gram_b()),
            a: raw(coeffs.a()),
            constant: coeffs.is_constant(),
            coeffs,
            cg_tol,
            cg_max_iter,
            mean_symbol,
        })
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.coeffs.grid()
    }

    pub fn cg_tol(&self) -> f64 {
        self.cg_tol
    }

    /// Whether `b` vanishes identically.
    pub fn is_noise_free(&self) -> bool {
        self.gram_b.iter().all(|c| c.iter().all(|v| *v == 0.0))
    }

    fn check(&self, u: &ScalarField) -> Result<()> {
        self.grid().check(u.grid())
    }

    /// Spectrum of `div(M grad u)` from the spectrum of `u`, for a
    /// row-major pointwise `d x d` field `M`.
    fn apply_matrix_spec(&self, m: &[Vec<f64>], spec: &[Complex64]) -> Vec<Complex64> {
        self.grid().div_matrix_grad(spec, m)
    }

    /// Spectrum of `L^a u`.
    pub(crate) fn la_spec(&self, spec: &[Complex64]) -> Vec<Complex64> {
        if self.constant {
            return spec.iter().zip(&self.mean_symbol).map(|(c, m)| -c * m).collect();
        }
        self.apply_matrix_spec(&self.gram_a, spec)
    }

    pub(crate) fn la_raw(&self, u: &[f64]) -> Vec<f64> {
        let g = self.grid();
        g.inverse_raw(self.la_spec(&g.forward_raw(u)))
    }

    pub(crate) fn lb_raw(&self, u: &[f64]) -> Vec<f64> {
        let g = self.grid();
        g.inverse_raw(self.apply_matrix_spec(&self.gram_b, &g.forward_raw(u)))
    }

    pub fn apply_la(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check(u)?;
        Ok(ScalarField::from_raw(self.grid(), self.la_raw(u.values())))
    }

    pub fn apply_lb(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check(u)?;
        Ok(ScalarField::from_raw(self.grid(), self.lb_raw(u.values())))
    }

    /// Solves `((1 + shift) - delta L^a) v = u`.
    pub(crate) fn solve_raw(&self, u: &[f64], delta: f64, shift: f64) -> Result<Vec<f64>> {
        if delta == 0.0 && shift == 0.0 {
            return Ok(u.to_vec());
        }
        let g = self.grid();
        Ok(g.inverse_raw(self.solve_spec(&g.forward_raw(u), delta, shift)?))
    }

    /// [`Self::solve_raw`] on spectra: preconditioned CG with the mean-coefficient
    /// symbol as preconditioner. The mean is solved exactly.
    pub(crate) fn solve_spec(&self, rhs: &[Complex64], delta: f64, shift: f64) -> Result<Vec<Complex64>> {
        if delta == 0.0 && shift == 0.0 {
            return Ok(rhs.to_vec());
        }
        let g = self.grid();
        let c0 = 1.0 + shift;
        let inv: Vec<f64> = self.mean_symbol.iter().map(|m| 1.0 / (c0 + delta * m)).collect();
        let precond = |r: &[Complex64]| -> Vec<Complex64> { r.iter().zip(&inv).map(|(r, m)| r * m).collect() };
        if self.constant {
            return Ok(precond(rhs));
        }
        let apply = |x: &[Complex64]| -> Vec<Complex64> {
            let mut lx = self.la_spec(x);
            lx.iter_mut().zip(x).for_each(|(l, x)| *l = c0 * x - delta * *l);
            lx
        };
        let dot = |x: &[Complex64], y: &[Complex64]| g.spec_dot_fast(x, y);
        let u_norm = dot(rhs, rhs).sqrt();
        if u_norm == 0.0 {
            return Ok(vec![Complex64::new(0.0, 0.0); rhs.len()]);
        }
        // Starting from M^{-1} u keeps the mean exact.
        let mut x = precond(rhs);
        let mut r = apply(&x);
        r.iter_mut().zip(rhs).for_each(|(r, u)| *r = u - *r);
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut residual = dot(&r, &r).sqrt() / u_norm;
        for _ in 0..self.cg_max_iter {
            if residual <= self.cg_tol {
                break;
            }
            let ap = apply(&p);
            let alpha = rz / dot(&p, &ap);
            for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
                *xi += alpha * pi;
                *ri -= alpha * api;
            }
            residual = dot(&r, &r).sqrt() / u_norm;
            z.iter_mut().zip(&r).zip(&inv).for_each(|((z, r), m)| *z = r * m);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        if residual <= self.cg_tol {
            x[0] = rhs[0] / c0;
            Ok(x)
        } else {
            Err(Error::CgNotConverged {
                iterations: self.cg_max_iter,
                residual,
            })
        }
    }

    /// `J_delta u = (1 - delta L^a)^{-1} u`.
    pub fn resolvent_ja(&self, u: &ScalarField, delta: f64) -> Result<ScalarField> {
        self.check(u)?;
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
        }
        Ok(ScalarField::from_raw(
            self.grid(),
            self.solve_raw(u.values(), delta, 0.0)?,
        ))
    }

    /// `J^0_delta u = (1 - delta (L^a + 2K))^{-1} u` for a curvature constant `K <= 0`.
    pub fn shifted_resolvent(&self, u: &ScalarField, delta: f64, k: f64) -> Result<ScalarField> {
        self.check(u)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be > 0, got {delta}")));
        }
        if k > 0.0 {
            return Err(Error::InvalidParameter(format!(
                "curvature constant must be <= 0, got {k}"
            )));
        }
        Ok(ScalarField::from_raw(
            self.grid(),
            self.solve_raw(u.values(), delta, -2.0 * k * delta)?,
        ))
    }

    /// `G_beta u = (beta - L^a)^{-1} u = J_{1/beta} u / beta`.
    pub fn resolvent_gbeta(&self, u: &ScalarField, beta: f64) -> Result<ScalarField> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        Ok(self.resolvent_ja(u, 1.0 / beta)?.scale(1.0 / beta))
    }

    /// `<b_i, grad v>` for every noise channel.
    pub(crate) fn b_grad_raw(&self, v: &[f64]) -> Vec<Vec<f64>> {
        self.b_dot(&self.grid().grad_raw(v))
    }

    /// `<b_i, grad>` per row of `b`.
    fn b_dot(&self, grad: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let b = self.coeffs.b();
        (0..b.rows())
            .map(|i| {
                let mut out = vec![0.0; grad[0].len()];
                for (k, gk) in grad.iter().enumerate() {
                    let bik = b.get(i, k).values();
                    out.iter_mut().zip(bik).zip(gk).for_each(|((o, b), x)| *o += b * x);
                }
                out
            })
            .collect()
    }

    /// `B^delta(u)`: component `i` is `<b_i, grad J_delta u>`; `delta = 0` skips the smoothing.
    pub fn apply_b(&self, u: &ScalarField, delta: f64) -> Result<VectorField> {
        let v = self.resolvent_ja(u, delta)?;
        let comps = self
            .b_grad_raw(v.values())
            .into_iter()
            .map(|c| ScalarField::from_raw(self.grid(), c))
            .collect();
        VectorField::new(comps)
    }

    /// Spectrum of `div(P a^T phi^lambda(a grad u))` with the 2/3 truncation `P`.
    fn nonlinear_spec(&self, spec: &[Complex64], pot: &ConvexPotential, lambda: f64) -> Vec<Complex64> {
        let g = self.grid();
        let mut z = matvec(&self.a, &g.spectral_grad(spec));
        let norm = pointwise_norm(&z);
        for (p, r) in norm.into_iter().enumerate() {
            let factor = pot.yosida_factor(r, lambda);
            for c in z.iter_mut() {
                c[p] *= factor;
            }
        }
        g.spectral_div(&matvec_transposed(&self.a, &z), true)
    }

    /// Every drift term and the noise coefficients, from the spectrum of `u`.
    pub(crate) fn drift_parts(
        &self,
        spec: &[Complex64],
        pot: &ConvexPotential,
        lambda: f64,
        delta: f64,
        eps: f64,
    ) -> Result<DriftParts> {
        let g = self.grid();
        let zero = vec![Complex64::new(0.0, 0.0); spec.len()];
        let nonlinear = self.nonlinear_spec(spec, pot, lambda);
        let viscous = if eps > 0.0 {
            self.la_spec(spec).into_iter().map(|v| eps * v).collect()
        } else {
            zero.clone()
        };
        if self.is_noise_free() {
            return Ok(DriftParts {
                nonlinear,
                viscous,
                correction: zero,
                noise: vec![vec![0.0; g.len()]; self.coeffs.noise_dim()],
            });
        }
        let ju = self.solve_spec(spec, delta, 0.0)?;
        let grad = g.spectral_grad(&ju);
        let noise = self.b_dot(&grad);
        let lb = g.spectral_div(&matvec(&self.gram_b, &grad), false);
        let correction = self.solve_spec(&lb, delta, 0.0)?.into_iter().map(|v| 0.5 * v).collect();
        Ok(DriftParts {
            nonlinear,
            viscous,
            correction,
            noise,
        })
    }

    /// `-A^{lambda,delta,eps}(u) = div(a^T phi^lambda(a grad u)) + eps L^a u + J L^b J u / 2`.
    pub fn apply_drift(
        &self,
        u: &ScalarField,
        pot: &ConvexPotential,
        lambda: f64,
        delta: f64,
        eps: f64,
    ) -> Result<ScalarField> {
        self.check(u)?;
        check_positive("lambda", lambda)?;
        check_positive("delta", delta)?;
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {eps}")));
        }
        let g = self.grid();
        let parts = self.drift_parts(&g.forward_raw(u.values()), pot, lambda, delta, eps)?;
        Ok(ScalarField::from_raw(g, g.inverse_raw(parts.total(true))))
    }

    /// `Psi^lambda(u) = int psi^lambda(a grad u)`; `lambda = 0` gives the unregularized `Psi`.
    pub fn potential_energy(&self, u: &ScalarField, pot: &ConvexPotential, lambda: f64) -> Result<f64> {
        self.check(u)?;
        Ok(self.potential_energy_raw(u.values(), pot, lambda))
    }

    pub(crate) fn potential_energy_raw(&self, u: &[f64], pot: &ConvexPotential, lambda: f64) -> f64 {
        self.potential_energy_grad(&self.grid().grad_raw(u), pot, lambda)
    }

    fn potential_energy_grad(&self, grad: &[Vec<f64>], pot: &ConvexPotential, lambda: f64) -> f64 {
        let theta0 = pot.theta0();
        let norm = pointwise_norm(&matvec(&self.a, grad));
        let terms = norm.into_iter().map(|r| {
            let v = if lambda > 0.0 {
                pot.moreau_scalar(r, lambda)
            } else {
                pot.theta(r)
            };
            v - theta0
        });
        self.grid().cell_volume() * compensated_sum(terms)
    }

    /// `A(u, u)` without re-validating shapes.
    pub(crate) fn form_a_raw(&self, u: &[f64]) -> f64 {
        self.energies(u, None, 0.0).1
    }

    /// `(Psi^lambda(u) - theta(0), A(u, u), |L^a u|_H^2)` from one gradient; the
    /// potential term is skipped without `pot`.
    pub(crate) fn energies(&self, u: &[f64], pot: Option<&ConvexPotential>, lambda: f64) -> (f64, f64, f64) {
        let g = self.grid();
        let grad = g.spectral_grad(&g.forward_raw(u));
        let psi = pot.map_or(0.0, |p| self.potential_energy_grad(&grad, p, lambda));
        let flux = matvec(&self.gram_a, &grad);
        let form = g.cell_volume()
            * compensated_sum((0..u.len()).map(|p| (0..grad.len()).map(|j| flux[j][p] * grad[j][p]).sum::<f64>()));
        let la = g.spectral_div(&flux, false);
        (psi, form, g.spec_dot(&la, &la))
    }
}

/// `(M v)_j = sum_l M_{jl} v_l` pointwise, `M` row-major `d x d`.
fn matvec(m: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    matvec_indexed(m, v, [0, 1, 2, 3])
}

/// `M^T v` pointwise.
fn matvec_transposed(m: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    matvec_indexed(m, v, [0, 2, 1, 3])
}

/// Pointwise 2x2 (or 1x1) product with the entries of `m` read in the order `idx`.
fn matvec_indexed(m: &[Vec<f64>], v: &[Vec<f64>], idx: [usize; 4]) -> Vec<Vec<f64>> {
    match v.len() {
        1 => vec![m[0].iter().zip(&v[0]).map(|(a, x)| a * x).collect()],
        _ => {
            let (v0, v1) = (&v[0], &v[1]);
            let rows = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter()
                    .zip(b)
                    .zip(v0.iter().zip(v1))
                    .map(|((a, b), (x, y))| a * x + b * y)
                    .collect()
            };
            vec![rows(&m[idx[0]], &m[idx[1]]), rows(&m[idx[2]], &m[idx[3]])]
        }
    }
}

/// Euclidean norm of a pointwise vector.
fn pointwise_norm(v: &[Vec<f64>]) -> Vec<f64> {
    match v.len() {
        1 => v[0].iter().map(|x| x.abs()).collect(),
        _ => v[0].iter().zip(&v[1]).map(|(a, b)| (a * a + b * b).sqrt()).collect(),
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
    }
}

/// Solves the dense system `(1 - delta L^a) v = u` by Gaussian elimination on the
/// assembled matrix. Intended for small test grids.
pub fn dense_resolvent(ops: &OperatorSet, u: &ScalarField, delta: f64) -> Result<ScalarField> {
    let n = u.values().len();
    let mut m = vec![vec![0.0; n + 1]; n];
    let mut e = vec![0.0; n];
    for col in 0..n {
        e[col] = 1.0;
        let g = ops.grid();
        let l = g.inverse_raw(ops.apply_matrix_spec(&ops.gram_a, &g.forward_raw(&e)));
        for row in 0..n {
            m[row][col] = if row == col { 1.0 } else { 0.0 } - delta * l[row];
        }
        e[col] = 0.0;
    }
    for (row, v) in u.values().iter().enumerate() {
        m[row][n] = *v;
    }
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| m[i][k].abs().partial_cmp(&m[j][k].abs()).unwrap())
            .unwrap();
        m.swap(k, piv);
        let pivot = m[k][k];
        let (top, rest) = m.split_at_mut(k + 1);
        let row_k = &top[k];
        for row in rest.iter_mut().take(n - k - 1) {
            let f = row[k] / pivot;
            if f != 0.0 {
                for (dst, src) in row[k..=n].iter_mut().zip(&row_k[k..=n]) {
                    *dst -= f * src;
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
        x[k] = (m[k][n] - s) / m[k][k];
    }
    u.grid().field(x)
}
