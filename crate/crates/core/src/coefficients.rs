//! Coefficient fields `a` (d x d) and `b` (N x d), their cached spectral
//! derivatives, and the pointwise checkers for (E), (D), (R), the sufficient
//! Bakry-Emery condition and the Killing identity.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{split_top_level, Expr};
use crate::fields::{partial, MatrixField, PeriodicGrid, ScalarField};

/// Checker tolerance for coefficients given in closed form.
pub const ANALYTIC_TOL: f64 = 1e-8;
/// Checker tolerance for user-sampled coefficient grids.
pub const SAMPLED_TOL: f64 = 1e-4;
/// Smallest admissible ellipticity constant.
pub const KAPPA_TOL: f64 = 1e-10;

/// Outcome of one pointwise condition check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: String,
    /// Largest pointwise violation. For (E) this is `-kappa`.
    pub residual: f64,
    /// Grid point where the residual is attained.
    pub location: [f64; 2],
    /// Index tuple attaining the residual (meaning depends on the condition).
    pub indices: Vec<usize>,
    pub tolerance: f64,
    pub pass: bool,
}

impl ConditionReport {
    fn new(condition: &str, residual: f64, location: [f64; 2], indices: Vec<usize>, tolerance: f64) -> Self {
        Self {
            condition: condition.into(),
            residual,
            location,
            indices,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

/// Coefficients `a`, `b` on a shared grid with cached first and second derivatives.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    a: MatrixField,
    b: MatrixField,
    da: Vec<MatrixField>,
    db: Vec<MatrixField>,
    d2a: Vec<MatrixField>,
    d2b: Vec<MatrixField>,
    gram_a: MatrixField,
    gram_b: MatrixField,
    kappa: f64,
    kappa_at: usize,
    analytic: bool,
    label: String,
}

impl CoefficientSet {
    /// Builds a set from sampled fields; checkers use the sampled tolerance.
    pub fn new(a: MatrixField, b: MatrixField) -> Result<Self> {
        Self::build(a, b, false, "sampled".into())
    }

    fn build(a: MatrixField, b: MatrixField, analytic: bool, label: String) -> Result<Self> {
        let grid = a.grid().clone();
        grid.check(b.grid())?;
        let d = grid.dim();
        if a.rows() != d || a.cols() != d {
            return Err(Error::ShapeMismatch(format!(
                "a must be {d}x{d}, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.cols() != d {
            return Err(Error::ShapeMismatch(format!(
                "b must have {d} columns, got {}",
                b.cols()
            )));
        }
        for m in [&a, &b] {
            for c in m.components() {
                if let Some(index) = c.values().iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { index });
                }
            }
        }
        let da: Vec<MatrixField> = (0..d).map(|k| derivative(&a, k)).collect();
        let db: Vec<MatrixField> = (0..d).map(|k| derivative(&b, k)).collect();
        let mut d2a = Vec::with_capacity(d * d);
        let mut d2b = Vec::with_capacity(d * d);
        for k in 0..d {
            for l in 0..d {
                d2a.push(derivative(&da[k], l));
                d2b.push(derivative(&db[k], l));
            }
        }
        let gram_a = a.gram();
        let gram_b = b.gram();
        let (kappa, kappa_at) = (0..grid.len())
            .map(|p| (min_eigenvalue(&gram_a, p), p))
            .fold((f64::INFINITY, 0), |acc, x| if x.0 < acc.0 { x } else { acc });
        Ok(Self {
            a,
            b,
            da,
            db,
            d2a,
            d2b,
            gram_a,
            gram_b,
            kappa,
            kappa_at,
            analytic,
            label,
        })
    }

    /// Coefficient pair presets: `identity`, `killing`, `paper-2.5[:A1,A2]`,
    /// `paper-2.5-perturbed[:A1,A2]`.
    pub fn preset(grid: &PeriodicGrid, name: &str) -> Result<Self> {
        let name = name.trim();
        let (base, args) = match name.split_once(':') {
            Some((b, a)) => (b, Some(a)),
            None => (name, None),
        };
        let (a_key, b_key) = match (base, args) {
            ("identity", None) => ("identity".to_string(), "zero".to_string()),
            ("killing", None) => ("identity".to_string(), "killing".to_string()),
            ("paper-2.5" | "paper-2.5-perturbed", _) => (name.to_string(), "ones".to_string()),
            _ => return Err(Error::UnknownPreset(name.into())),
        };
        let mut set = Self::from_keys(grid, &a_key, &b_key)?;
        set.label = name.into();
        Ok(set)
    }

    /// Builds `a` and `b` from separate keys (see [`matrix_a`] and [`matrix_b`]).
    pub fn from_keys(grid: &PeriodicGrid, a_key: &str, b_key: &str) -> Result<Self> {
        let a = matrix_a(grid, a_key)?;
        let b = matrix_b(grid, b_key)?;
        Self::build(a, b, true, format!("a={a_key}, b={b_key}"))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.a.grid()
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    /// Number of noise channels `N`.
    pub fn noise_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn a(&self) -> &MatrixField {
        &self.a
    }

    pub fn b(&self) -> &MatrixField {
        &self.b
    }

    /// `d a / d xi_k`.
    pub fn da(&self, k: usize) -> &MatrixField {
        &self.da[k]
    }

    pub fn db(&self, k: usize) -> &MatrixField {
        &self.db[k]
    }

    /// `d^2 a / d xi_k d xi_l`.
    pub fn d2a(&self, k: usize, l: usize) -> &MatrixField {
        &self.d2a[k * self.dim() + l]
    }

    pub fn d2b(&self, k: usize, l: usize) -> &MatrixField {
        &self.d2b[k * self.dim() + l]
    }

    /// Pointwise `a^T a`.
    pub fn gram_a(&self) -> &MatrixField {
        &self.gram_a
    }

    /// Pointwise `b^T b`.
    pub fn gram_b(&self) -> &MatrixField {
        &self.gram_b
    }

    /// Minimum over the grid of the smallest eigenvalue of `a^T a`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_analytic(&self) -> bool {
        self.analytic
    }

    /// Default checker tolerance for this set.
    pub fn tolerance(&self) -> f64 {
        if self.analytic {
            ANALYTIC_TOL
        } else {
            SAMPLED_TOL
        }
    }

    /// `sup |a|^2` in the operator norm.
    pub fn sup_a2(&self) -> f64 {
        sup_max_eigenvalue(&self.gram_a)
    }

    /// `sup |b|^2` in the operator norm.
    pub fn sup_b2(&self) -> f64 {
        sup_max_eigenvalue(&self.gram_b)
    }

    /// Whether every cached first derivative vanishes.
    pub fn is_constant(&self) -> bool {
        self.da
            .iter()
            .chain(&self.db)
            .all(|m| m.components().iter().all(|c| c.max_abs() < 1e-12))
    }

    /// Grid mean of `a^T a`, row-major `d x d`.
    pub fn mean_gram_a(&self) -> Vec<f64> {
        self.gram_a.components().iter().map(|c| c.integral()).collect()
    }

    /// (E): `|a zeta|^2 >= kappa |zeta|^2`. Pass iff `kappa > 1e-10`.
    pub fn check_e(&self) -> ConditionReport {
        let mut r = ConditionReport::new("E", -self.kappa, self.grid().point(self.kappa_at), vec![], -KAPPA_TOL);
        r.pass = self.kappa > KAPPA_TOL;
        r
    }

    /// (D): `div b_i = 0` for every row.
    pub fn check_d(&self) -> ConditionReport {
        let d = self.dim();
        let mut worst = Worst::default();
        for i in 0..self.noise_dim() {
            for p in 0..self.grid().len() {
                let v: f64 = (0..d).map(|k| self.db[k].at(i, k, p)).sum();
                worst.offer(v.abs(), p, vec![i]);
            }
        }
        worst.report("D", self.grid(), self.tolerance())
    }

    /// Residual of (R) for one index triple at one grid point.
    pub fn r_residual(&self, l: usize, j: usize, i: usize, p: usize) -> f64 {
        let d = self.dim();
        let (a, b) = (&self.a, &self.b);
        let mut s = 0.0;
        for k in 0..d {
            for q in 0..d {
                s += b.at(i, k, p) * (a.at(q, l, p) * self.da[k].at(q, j, p) + a.at(q, j, p) * self.da[k].at(q, l, p))
                    - a.at(q, k, p) * (a.at(q, j, p) * self.db[k].at(i, l, p) + a.at(q, l, p) * self.db[k].at(i, j, p));
            }
        }
        s
    }

    /// (R), evaluated for every `(l, j, i)` at every grid point.
    pub fn check_r(&self) -> ConditionReport {
        let d = self.dim();
        let mut worst = Worst::default();
        for p in 0..self.grid().len() {
            for i in 0..self.noise_dim() {
                for l in 0..d {
                    for j in l..d {
                        let r = self.r_residual(l, j, i, p);
                        debug_assert!((r - self.r_residual(j, l, i, p)).abs() <= 1e-12 * r.abs().max(1.0));
                        worst.offer(r.abs(), p, vec![l, j, i]);
                    }
                }
            }
        }
        worst.report("R", self.grid(), self.tolerance())
    }

    /// Sufficient Bakry-Emery condition
    /// `sum_k sum_q [a_qj d_k a_qi + a_qi d_k a_qj] = 0` for every `(i, j)`.
    pub fn check_be_sufficient(&self) -> ConditionReport {
        let d = self.dim();
        let mut worst = Worst::default();
        for p in 0..self.grid().len() {
            for i in 0..d {
                for j in i..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        for q in 0..d {
                            s += self.a.at(q, j, p) * self.da[k].at(q, i, p)
                                + self.a.at(q, i, p) * self.da[k].at(q, j, p);
                        }
                    }
                    worst.offer(s.abs(), p, vec![i, j]);
                }
            }
        }
        worst.report("BE-sufficient", self.grid(), self.tolerance())
    }

    /// Killing identity `d_j b_il + d_l b_ij = 0`.
    pub fn check_killing(&self) -> ConditionReport {
        let d = self.dim();
        let mut worst = Worst::default();
        for p in 0..self.grid().len() {
            for i in 0..self.noise_dim() {
                for l in 0..d {
                    for j in l..d {
                        let v = self.db[j].at(i, l, p) + self.db[l].at(i, j, p);
                        worst.offer(v.abs(), p, vec![i, l, j]);
                    }
                }
            }
        }
        worst.report("Killing", self.grid(), self.tolerance())
    }

    /// (E), (D), (R) and the sufficient BE condition, in that order.
    pub fn check_all(&self) -> Vec<ConditionReport> {
        vec![
            self.check_e(),
            self.check_d(),
            self.check_r(),
            self.check_be_sufficient(),
        ]
    }
}

#[derive(Default)]
struct Worst {
    value: f64,
    at: usize,
    indices: Vec<usize>,
}

impl Worst {
    fn offer(&mut self, v: f64, p: usize, indices: Vec<usize>) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.at = p;
            self.indices = indices;
        }
    }

    fn report(self, name: &str, grid: &PeriodicGrid, tol: f64) -> ConditionReport {
        ConditionReport::new(name, self.value, grid.point(self.at), self.indices, tol)
    }
}

fn derivative(m: &MatrixField, k: usize) -> MatrixField {
    let comps = m
        .components()
        .iter()
        .map(|c| partial(c, k).expect("axis within grid dimension"))
        .collect();
    MatrixField::new(m.rows(), m.cols(), comps).expect("shape preserved")
}

/// Eigenvalues of a symmetric 1x1 or 2x2 matrix field at point `p`, ascending.
fn eigenvalues(m: &MatrixField, p: usize) -> (f64, f64) {
    if m.rows() == 1 {
        let v = m.at(0, 0, p);
        return (v, v);
    }
    let (x, y, z) = (m.at(0, 0, p), 0.5 * (m.at(0, 1, p) + m.at(1, 0, p)), m.at(1, 1, p));
    let half_tr = 0.5 * (x + z);
    let disc = (0.25 * (x - z) * (x - z) + y * y).sqrt();
    let hi = half_tr + disc;
    let det = x * z - y * y;
    // Cancellation-free smallest eigenvalue for positive semi-definite input.
    let lo = if hi > 0.0 { det / hi } else { half_tr - disc };
    (lo, hi)
}

fn min_eigenvalue(m: &MatrixField, p: usize) -> f64 {
    eigenvalues(m, p).0
}

fn sup_max_eigenvalue(m: &MatrixField) -> f64 {
    (0..m.grid().len()).map(|p| eigenvalues(m, p).1).fold(0.0, f64::max)
}

fn example_amplitudes(args: Option<&str>) -> Result<(f64, f64)> {
    let Some(args) = args else {
        return Ok((0.3, 0.4));
    };
    let parts: Vec<&str> = args.split(',').map(str::trim).collect();
    let parse = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::UnknownPreset(format!("paper-2.5:{args}")))
    };
    match parts.as_slice() {
        [a1, a2] => {
            let (a1, a2) = (parse(a1)?, parse(a2)?);
            if a1.abs() >= 1.0 || a2.abs() >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "paper-2.5 amplitudes must lie in (-1, 1) so that h1, h2 > 0, got {a1}, {a2}"
                )));
            }
            Ok((a1, a2))
        }
        _ => Err(Error::UnknownPreset(format!("paper-2.5:{args}"))),
    }
}

/// `a` from a key: `identity`, `paper-2.5[:A1,A2]`, `paper-2.5-perturbed[:A1,A2]`,
/// `constant:<rows>` or `expr:<rows>`.
///
/// `paper-2.5` is `diag(h1(t - s), h2(t - s))` with `h1 = 1 + A1 sin 2 pi r`,
/// `h2 = 1 + A2 cos 2 pi r` (defaults `A1 = 0.3`, `A2 = 0.4`). The perturbed variant
/// replaces `h1(t - s)` by `h1(t)` and violates (R) for `b = ones`.
pub fn matrix_a(grid: &PeriodicGrid, key: &str) -> Result<MatrixField> {
    let key = key.trim();
    let d = grid.dim();
    if key == "identity" {
        let rows: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        return MatrixField::constant(grid, &rows);
    }
    let (base, args) = match key.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (key, None),
    };
    match base {
        "paper-2.5" | "paper-2.5-perturbed" => {
            if d != 2 {
                return Err(Error::InvalidParameter("paper-2.5 coefficients need d = 2".into()));
            }
            let (a1, a2) = example_amplitudes(args)?;
            let perturbed = base.ends_with("perturbed");
            let h1 = grid.sample(|x| {
                let r = if perturbed { x[0] } else { x[0] - x[1] };
                1.0 + a1 * (2.0 * PI * r).sin()
            });
            let h2 = grid.sample(|x| 1.0 + a2 * (2.0 * PI * (x[0] - x[1])).cos());
            MatrixField::new(2, 2, vec![h1, grid.zeros(), grid.zeros(), h2])
        }
        "constant" | "expr" => parse_matrix(grid, args.unwrap_or(""), Some(d)),
        _ => Err(Error::UnknownPreset(key.into())),
    }
}

/// `b` from a key: `zero[:N]`, `ones`, `killing`, `constant:<rows>` or `expr:<rows>`.
///
/// Every periodic Killing field of the flat torus is constant, so `killing` is the
/// constant matrix `[[1, 0.5], [-0.5, 1]]` in d = 2 and `[[0.5]]` in d = 1.
pub fn matrix_b(grid: &PeriodicGrid, key: &str) -> Result<MatrixField> {
    let key = key.trim();
    let d = grid.dim();
    let (base, args) = match key.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (key, None),
    };
    match (base, args) {
        ("zero", _) => {
            let n: usize = match args {
                Some(s) => s.trim().parse().map_err(|_| Error::UnknownPreset(key.into()))?,
                None => d,
            };
            if n == 0 {
                return Err(Error::InvalidParameter("noise dimension must be >= 1".into()));
            }
            MatrixField::constant(grid, &vec![vec![0.0; d]; n])
        }
        ("ones", None) => MatrixField::constant(grid, &vec![vec![1.0; d]; d]),
        ("killing", None) => {
            if d == 1 {
                MatrixField::constant(grid, &[vec![0.5]])
            } else {
                MatrixField::constant(grid, &[vec![1.0, 0.5], vec![-0.5, 1.0]])
            }
        }
        ("constant" | "expr", Some(body)) => parse_matrix(grid, body, None),
        _ => Err(Error::UnknownPreset(key.into())),
    }
}

/// Rows separated by `;`, entries by `,` (outside parentheses). Each entry is an
/// [`Expr`]; plain numbers are constants.
fn parse_matrix(grid: &PeriodicGrid, body: &str, rows_expected: Option<usize>) -> Result<MatrixField> {
    let d = grid.dim();
    let rows: Vec<Vec<Expr>> = split_top_level(body, ';')
        .into_iter()
        .map(|row| {
            split_top_level(row, ',')
                .into_iter()
                .map(|e| Expr::parse(e, d))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch(format!("every row of `{body}` needs {d} entries")));
    }
    if let Some(r) = rows_expected {
        if rows.len() != r {
            return Err(Error::ShapeMismatch(format!(
                "`{body}` needs {r} rows, got {}",
                rows.len()
            )));
        }
    }
    let comps: Vec<ScalarField> = rows.iter().flatten().map(|e| grid.sample(|x| e.eval(x))).collect();
    MatrixField::new(rows.len(), d, comps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(2, n).unwrap()
    }

    #[test]
    fn identity_preset() {
        let c = CoefficientSet::preset(&grid2(16), "identity").unwrap();
        assert_eq!(c.kappa(), 1.0);
        for r in c.check_all() {
            assert!(r.pass, "{r:?}");
        }
        assert!(c.is_constant());
    }

    #[test]
    fn example_preset_passes() {
        let g = grid2(32);
        let c = CoefficientSet::preset(&g, "paper-2.5").unwrap();
        for r in c.check_all() {
            assert!(r.pass, "{r:?}");
        }
        assert!(c.check_r().residual < 1e-10);
        // kappa = min(h1^2, h2^2) over the grid.
        let expected = (0..g.len())
            .map(|p| {
                let (h1, h2) = (c.a().at(0, 0, p), c.a().at(1, 1, p));
                (h1 * h1).min(h2 * h2)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((c.kappa() - expected).abs() < 1e-14);
    }

    #[test]
    fn perturbed_preset_fails_r_with_location() {
        let g = grid2(32);
        let c = CoefficientSet::preset(&g, "paper-2.5-perturbed").unwrap();
        assert!(c.check_e().pass && c.check_d().pass);
        let r = c.check_r();
        assert!(!r.pass && r.residual > 0.1);
        // d_t h1^2 = 2 h1 h1' peaks where sin is positive and cos near 1.
        let t = r.location[0];
        let h = |t: f64| 2.0 * (1.0 + 0.3 * (2.0 * PI * t).sin()) * 0.3 * 2.0 * PI * (2.0 * PI * t).cos();
        assert!((h(t).abs() - r.residual).abs() < 1e-9 * r.residual);
    }

    #[test]
    fn divergent_b_fails_d() {
        let g = grid2(16);
        let c = CoefficientSet::from_keys(&g, "identity", "expr:sin(1,0),0").unwrap();
        let r = c.check_d();
        assert!(!r.pass);
        assert!((r.residual - 2.0 * PI).abs() < 1e-10);
        assert!(!c.check_killing().pass);
    }

    #[test]
    fn be_sufficient_detects_variable_diagonal() {
        let g = grid2(16);
        let c = CoefficientSet::from_keys(&g, "expr:1+0.5*sin(1,0),0;0,1", "zero").unwrap();
        let r = c.check_be_sufficient();
        assert!(!r.pass);
        // residual = 2 h h' with h = 1 + sin(2 pi t)/2.
        let expected = (0..g.n())
            .map(|i| {
                let t = i as f64 / g.n() as f64;
                (2.0 * (1.0 + 0.5 * (2.0 * PI * t).sin()) * PI * (2.0 * PI * t).cos()).abs()
            })
            .fold(0.0, f64::max);
        assert!((r.residual - expected).abs() < 1e-10);
    }

    #[test]
    fn zero_row_fails_e_at_located_point() {
        let g = grid2(16);
        let mut v = vec![1.0; g.len()];
        v[37] = 0.0;
        let a = MatrixField::new(2, 2, vec![g.field(v).unwrap(), g.zeros(), g.zeros(), g.constant(1.0)]).unwrap();
        let b = MatrixField::constant(&g, &[vec![0.0, 0.0]]).unwrap();
        let c = CoefficientSet::new(a, b).unwrap();
        let r = c.check_e();
        assert!(!r.pass);
        assert_eq!(r.location, g.point(37));
    }

    #[test]
    fn killing_preset() {
        for d in [1, 2] {
            let g = PeriodicGrid::new(d, 16).unwrap();
            let c = CoefficientSet::preset(&g, "killing").unwrap();
            assert!(c.check_killing().pass);
            for r in c.check_all() {
                assert!(r.pass, "{r:?}");
            }
        }
    }

    #[test]
    fn bad_keys() {
        let g = grid2(16);
        assert!(CoefficientSet::preset(&g, "spiral").is_err());
        assert!(matrix_a(&g, "constant:1,0").is_err());
        assert!(matrix_a(&PeriodicGrid::new(1, 16).unwrap(), "paper-2.5").is_err());
        assert!(matrix_a(&g, "paper-2.5:1.5,0").is_err());
        assert!(matrix_b(&g, "zero:0").is_err());
    }

    #[test]
    fn constant_matrix_keys() {
        let g = grid2(8);
        let c = CoefficientSet::from_keys(&g, "constant:2,0;0,3", "constant:1,1").unwrap();
        assert_eq!(c.kappa(), 4.0);
        assert_eq!(c.noise_dim(), 1);
        assert!((c.sup_a2() - 9.0).abs() < 1e-14);
        assert!((c.sup_b2() - 2.0).abs() < 1e-14);
    }
}
