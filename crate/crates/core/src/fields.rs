//! Grid-sampled scalar, vector and matrix fields on the flat torus `T^d = R^d / Z^d`
//! together with the spectral calculus used everywhere else in the crate.
//!
//! Fields are stored in physical space, row-major with axis 0 varying slowest.
//! Spectra use the normalized convention `c_k = n^{-d} sum_j f_j e^{-2 pi i k.j / n}`,
//! so that a constant field `1` has `c_0 = 1` and `h^d sum |f|^2 = sum |c_k|^2`.
//!
//! All derivatives are Fourier multipliers. The Nyquist mode is dropped from every
//! derivative (including the Laplacian), which keeps the first-derivative matrices
//! real and skew-symmetric and makes `div(grad f) == laplace(f)` an identity.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

thread_local! {
    /// FFT scratch and the spare buffer of the 2D transpose, reused across calls.
    static SCRATCH: RefCell<(Vec<Complex64>, Vec<Complex64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Per-index spectral tables on the full (complex) layout.
struct Tables {
    /// `2 pi k_axis`, Nyquist zeroed.
    wave: [Vec<f64>; 2],
    /// `-|2 pi k|^2`, Nyquist dropped.
    symbol: Vec<f64>,
    /// Survives the 2/3 truncation.
    keep: Vec<bool>,
    /// Flat index of `-k`.
    neg: Vec<usize>,
}

/// Uniform periodic grid with `n` points per axis in dimension `d` (1 or 2).
#[derive(Clone)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
    /// `2 pi k` per axis index, Nyquist zeroed.
    plans: Arc<Plans>,
    tables: Arc<Tables>,
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        };
        let wave: Vec<f64> = (0..n)
            .map(|i| {
                let k = signed_mode(i, n);
                if 2 * k.unsigned_abs() as usize == n {
                    0.0
                } else {
                    2.0 * PI * k as f64
                }
            })
            .collect();
        let len = n.pow(dim as u32);
        let mut tables = Tables {
            wave: [vec![0.0; len], vec![0.0; len]],
            symbol: vec![0.0; len],
            keep: vec![false; len],
            neg: vec![0; len],
        };
        for f in 0..len {
            // 2D spectra are stored transposed: flat = k1 * n + k0.
            let (i, j) = if dim == 1 { (f, 0) } else { (f % n, f / n) };
            let w0 = wave[i];
            let w1 = if dim == 1 { 0.0 } else { wave[j] };
            tables.wave[0][f] = w0;
            tables.wave[1][f] = w1;
            tables.symbol[f] = -(w0 * w0 + w1 * w1);
            tables.keep[f] = 3 * signed_mode(i, n).unsigned_abs() as usize <= n
                && 3 * signed_mode(j, n).unsigned_abs() as usize <= n;
            let (ni, nj) = ((n - i) % n, (n - j) % n);
            tables.neg[f] = if dim == 1 { ni } else { nj * n + ni };
        }
        Ok(Self {
            dim,
            n,
            plans: Arc::new(plans),
            tables: Arc::new(tables),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Per-axis indices of a flat index.
    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.n, flat % self.n]
        }
    }

    /// Coordinates `xi` of a flat index (unused axes are zero).
    pub fn point(&self, flat: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(flat);
        let h = self.spacing();
        if self.dim == 1 {
            [i as f64 * h, 0.0]
        } else {
            [i as f64 * h, j as f64 * h]
        }
    }

    /// Signed integer wave vector of a flat spectral index.
    pub fn mode(&self, flat: usize) -> [i64; 2] {
        let [i, j] = self.multi_index(flat);
        if self.dim == 1 {
            [signed_mode(i, self.n), 0]
        } else {
            [signed_mode(i, self.n), signed_mode(j, self.n)]
        }
    }

    /// Flat spectral index of a signed wave vector.
    pub fn mode_index(&self, k: [i64; 2]) -> usize {
        let wrap = |m: i64| m.rem_euclid(self.n as i64) as usize;
        if self.dim == 1 {
            wrap(k[0])
        } else {
            wrap(k[0]) * self.n + wrap(k[1])
        }
    }

    /// Flat index of mode `k` in the internal (transposed) spectral layout.
    fn spec_index(&self, k: [i64; 2]) -> usize {
        self.mode_index(if self.dim == 2 { [k[1], k[0]] } else { k })
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField {
            grid: self.clone(),
            values: vec![0.0; self.len()],
        }
    }

    pub fn constant(&self, c: f64) -> ScalarField {
        ScalarField {
            grid: self.clone(),
            values: vec![c; self.len()],
        }
    }

    /// Samples `f(xi)` at every grid point.
    pub fn sample(&self, mut f: impl FnMut([f64; 2]) -> f64) -> ScalarField {
        ScalarField {
            grid: self.clone(),
            values: (0..self.len()).map(|i| f(self.point(i))).collect(),
        }
    }

    pub fn field(&self, values: Vec<f64>) -> Result<ScalarField> {
        ScalarField::new(self.clone(), values)
    }

    pub(crate) fn check(&self, other: &PeriodicGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected_dim: self.dim,
                expected_n: self.n,
                found_dim: other.dim,
                found_n: other.n,
            })
        }
    }

    fn transform(&self, data: &mut Vec<Complex64>, forward: bool) {
        let plan = if forward {
            &self.plans.forward
        } else {
            &self.plans.inverse
        };
        let zero = Complex64::new(0.0, 0.0);
        SCRATCH.with(|cell| {
            let (scratch, spare) = &mut *cell.borrow_mut();
            scratch.resize(plan.get_inplace_scratch_len(), zero);
            // rustfft processes every length-n chunk of the buffer. In 2D the spectrum
            // stays transposed, which saves one transpose per transform.
            plan.process_with_scratch(data, scratch);
            if self.dim == 2 {
                let n = self.n;
                spare.resize(n * n, zero);
                transpose::transpose(data, spare, n, n);
                std::mem::swap(data, spare);
                plan.process_with_scratch(data, scratch);
            }
        });
    }

    pub(crate) fn forward_raw(&self, values: &[f64]) -> Vec<Complex64> {
        let scale = self.cell_volume();
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v * scale, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    pub(crate) fn inverse_raw(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, false);
        spec.into_iter().map(|c| c.re).collect()
    }

    /// `2 pi k_axis` for every flat spectral index, zero on the Nyquist line.
    #[inline]
    pub(crate) fn wave(&self, axis: usize) -> &[f64] {
        &self.tables.wave[axis]
    }

    /// `-|2 pi k|^2` (Nyquist-dropped) for every flat spectral index.
    #[inline]
    pub(crate) fn symbol(&self) -> &[f64] {
        &self.tables.symbol
    }

    /// Whether a spectral index survives the 2/3 truncation.
    #[inline]
    pub(crate) fn keeps_mode(&self, flat: usize) -> bool {
        self.tables.keep[flat]
    }

    /// `h^d sum f g` from the spectra of real fields.
    pub(crate) fn spec_dot(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        compensated_sum(a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im))
    }

    /// [`Self::spec_dot`] with plain four-lane summation, for solver inner products.
    pub(crate) fn spec_dot_fast(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let (ca, cb) = (a.chunks_exact(2), b.chunks_exact(2));
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            acc[0] += x[0].re * y[0].re;
            acc[1] += x[0].im * y[0].im;
            acc[2] += x[1].re * y[1].re;
            acc[3] += x[1].im * y[1].im;
        }
        let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x.re * y.re + x.im * y.im).sum();
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }

    /// Physical partial derivatives from a spectrum. In 2D both components come
    /// out of one complex transform of `d_0 u + i d_1 u`.
    pub(crate) fn spectral_grad(&self, spec: &[Complex64]) -> Vec<Vec<f64>> {
        let [w0, w1] = &self.tables.wave;
        if self.dim == 1 {
            let d = spec
                .iter()
                .zip(w0)
                .map(|(c, &k)| Complex64::new(-k * c.im, k * c.re))
                .collect();
            return vec![self.inverse_raw(d)];
        }
        // i w0 c + i (i w1 c) = (i w0 - w1) c
        let mut packed: Vec<Complex64> = spec
            .iter()
            .zip(w0.iter().zip(w1))
            .map(|(c, (&a, &b))| Complex64::new(-a * c.im - b * c.re, a * c.re - b * c.im))
            .collect();
        self.transform(&mut packed, false);
        let (re, im) = packed.into_iter().map(|c| (c.re, c.im)).unzip();
        vec![re, im]
    }

    /// Spectrum of the divergence of physical components, optionally 2/3-dealiased.
    /// In 2D both components share one complex transform.
    pub(crate) fn spectral_div(&self, comps: &[Vec<f64>], dealias: bool) -> Vec<Complex64> {
        let w0 = &self.tables.wave[0];
        let scale = self.cell_volume();
        let mut out: Vec<Complex64> = if self.dim == 1 {
            let f = self.forward_raw(&comps[0]);
            f.iter()
                .zip(w0)
                .map(|(c, &k)| Complex64::new(-k * c.im, k * c.re))
                .collect()
        } else {
            let mut h: Vec<Complex64> = comps[0]
                .iter()
                .zip(&comps[1])
                .map(|(&a, &b)| Complex64::new(a * scale, b * scale))
                .collect();
            self.transform(&mut h, true);
            self.unpack_div(&h)
        };
        if dealias {
            for (o, &keep) in out.iter_mut().zip(&self.tables.keep) {
                if !keep {
                    *o = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }

    /// Divergence spectrum from the forward transform of a packed 2D flux `F0 + i F1`.
    fn unpack_div(&self, h: &[Complex64]) -> Vec<Complex64> {
        let [w0, w1] = &self.tables.wave;
        h.iter()
            .zip(&self.tables.neg)
            .zip(w0.iter().zip(w1))
            .map(|((&p, &nf), (&k0, &k1))| {
                // F0 = (p + q) / 2, F1 = (p - q) / (2i) with q = conj(h(-k)); div = i k0 F0 + i k1 F1
                let q = h[nf].conj();
                let (s, d) = (p + q, p - q);
                Complex64::new(0.5 * (-k0 * s.im + k1 * d.re), 0.5 * (k0 * s.re + k1 * d.im))
            })
            .collect()
    }

    /// Spectrum of `div(M grad u)` for a pointwise row-major `d x d` field `M`,
    /// using one inverse and one forward transform on a single buffer.
    pub(crate) fn div_matrix_grad(&self, spec: &[Complex64], m: &[Vec<f64>]) -> Vec<Complex64> {
        let [w0, w1] = &self.tables.wave;
        let scale = self.cell_volume();
        let deriv = |c: &Complex64, k: f64| Complex64::new(-k * c.im, k * c.re);
        if self.dim == 1 {
            let mut buf: Vec<Complex64> = spec.iter().zip(w0).map(|(c, &k)| deriv(c, k)).collect();
            self.transform(&mut buf, false);
            for (b, m) in buf.iter_mut().zip(&m[0]) {
                *b = Complex64::new(b.re * m * scale, 0.0);
            }
            self.transform(&mut buf, true);
            return buf.iter().zip(w0).map(|(c, &k)| deriv(c, k)).collect();
        }
        let mut buf: Vec<Complex64> = spec
            .iter()
            .zip(w0.iter().zip(w1))
            .map(|(c, (&a, &b))| Complex64::new(-a * c.im - b * c.re, a * c.re - b * c.im))
            .collect();
        self.transform(&mut buf, false);
        let rows = m[0].iter().zip(&m[1]).zip(m[2].iter().zip(&m[3]));
        for (b, ((m0, m1), (m2, m3))) in buf.iter_mut().zip(rows) {
            let (gx, gy) = (b.re, b.im);
            *b = Complex64::new(scale * (m0 * gx + m1 * gy), scale * (m2 * gx + m3 * gy));
        }
        self.transform(&mut buf, true);
        self.unpack_div(&buf)
    }

    /// Partial derivatives of raw values along every axis.
    pub(crate) fn grad_raw(&self, values: &[f64]) -> Vec<Vec<f64>> {
        self.spectral_grad(&self.forward_raw(values))
    }

    /// Divergence of raw components, optionally 2/3-dealiased before differentiation.
    pub(crate) fn div_raw(&self, comps: &[Vec<f64>], dealias: bool) -> Vec<f64> {
        self.inverse_raw(self.spectral_div(comps, dealias))
    }

    /// Applies a real Fourier multiplier `m(flat index)`.
    pub(crate) fn multiplier_raw(&self, values: &[f64], m: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut spec = self.forward_raw(values);
        spec.iter_mut().enumerate().for_each(|(i, c)| *c *= m(i));
        self.inverse_raw(spec)
    }
}

fn signed_mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    let src = data.to_vec();
    transpose::transpose(&src, data, n, n);
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Real scalar field sampled on a [`PeriodicGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: &PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ScalarField) -> Result<Self> {
        self.grid.check(&other.grid)?;
        Ok(Self::from_raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect(),
        ))
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.axpy(1.0, other)
    }

    /// `int_{T^d} f dxi`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * compensated_sum(self.values.iter().copied())
    }

    pub fn norm_h(&self) -> f64 {
        self.norm_h2().sqrt()
    }

    pub fn norm_h2(&self) -> f64 {
        self.grid.cell_volume() * compensated_sum(self.values.iter().map(|v| v * v))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Normalized discrete Fourier coefficients of a [`ScalarField`].
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: PeriodicGrid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of a signed wave vector.
    pub fn at(&self, k: [i64; 2]) -> Complex64 {
        self.coeffs[self.grid.mode_index(k)]
    }

    /// `sum |c_k|^2`.
    pub fn energy(&self) -> f64 {
        compensated_sum(self.coeffs.iter().map(|c| c.norm_sqr()))
    }

    /// Zeroes every mode outside the 2/3 band.
    pub fn dealias(&mut self) {
        for i in 0..self.coeffs.len() {
            if !self.grid.keeps_mode(i) {
                self.coeffs[i] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Vector field with `m` scalar components on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: PeriodicGrid,
    comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(comps: Vec<ScalarField>) -> Result<Self> {
        let grid = comps
            .first()
            .ok_or_else(|| Error::ShapeMismatch("vector field needs at least one component".into()))?
            .grid
            .clone();
        for c in &comps {
            grid.check(&c.grid)?;
        }
        Ok(Self { grid, comps })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.comps[i]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.comps
    }

    /// `sum_i ||v_i||_H^2`.
    pub fn norm_h2(&self) -> f64 {
        self.comps.iter().map(ScalarField::norm_h2).sum()
    }
}

/// `r x c` matrix of scalar fields, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: PeriodicGrid,
    rows: usize,
    cols: usize,
    comps: Vec<ScalarField>,
}

impl MatrixField {
    pub fn new(rows: usize, cols: usize, comps: Vec<ScalarField>) -> Result<Self> {
        if rows == 0 || cols == 0 || comps.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix field {rows}x{cols} given {} components",
                comps.len()
            )));
        }
        let grid = comps[0].grid.clone();
        for c in &comps {
            grid.check(&c.grid)?;
        }
        Ok(Self {
            grid,
            rows,
            cols,
            comps,
        })
    }

    /// Spatially constant matrix, rows given as slices.
    pub fn constant(grid: &PeriodicGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged constant matrix".into()));
        }
        let comps = rows.iter().flat_map(|r| r.iter().map(|&v| grid.constant(v))).collect();
        Self::new(rows.len(), cols, comps)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.comps[i * self.cols + j]
    }

    /// Entry `(i, j)` at grid point `p`.
    #[inline]
    pub fn at(&self, i: usize, j: usize, p: usize) -> f64 {
        self.comps[i * self.cols + j].values[p]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.comps
    }

    /// Row `i` as a vector field.
    pub fn row(&self, i: usize) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            comps: self.comps[i * self.cols..(i + 1) * self.cols].to_vec(),
        }
    }

    /// Pointwise `M^T M`.
    pub fn gram(&self) -> MatrixField {
        let c = self.cols;
        let mut comps = Vec::with_capacity(c * c);
        for i in 0..c {
            for j in 0..c {
                let values = (0..self.grid.len())
                    .map(|p| (0..self.rows).map(|q| self.at(q, i, p) * self.at(q, j, p)).sum())
                    .collect();
                comps.push(ScalarField::from_raw(&self.grid, values));
            }
        }
        MatrixField {
            grid: self.grid.clone(),
            rows: c,
            cols: c,
            comps,
        }
    }

    /// Largest pointwise Frobenius norm squared.
    pub fn sup_frobenius2(&self) -> f64 {
        (0..self.grid.len())
            .map(|p| self.comps.iter().map(|c| c.values[p] * c.values[p]).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Normalized DFT; rejects non-finite input.
pub fn dft(f: &ScalarField) -> Result<Spectrum> {
    if let Some(index) = f.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut coeffs = f.grid.forward_raw(&f.values);
    if f.grid.dim == 2 {
        transpose_square(&mut coeffs, f.grid.n);
    }
    Ok(Spectrum {
        grid: f.grid.clone(),
        coeffs,
    })
}

/// Inverse of [`dft`]; the imaginary part is discarded.
pub fn idft(spec: &Spectrum) -> ScalarField {
    let mut coeffs = spec.coeffs.clone();
    if spec.grid.dim == 2 {
        transpose_square(&mut coeffs, spec.grid.n);
    }
    ScalarField::from_raw(&spec.grid, spec.grid.inverse_raw(coeffs))
}

pub fn grad(f: &ScalarField) -> VectorField {
    let comps = f
        .grid
        .grad_raw(&f.values)
        .into_iter()
        .map(|v| ScalarField::from_raw(&f.grid, v))
        .collect();
    VectorField {
        grid: f.grid.clone(),
        comps,
    }
}

pub fn div(v: &VectorField) -> Result<ScalarField> {
    if v.comps.len() != v.grid.dim {
        return Err(Error::ShapeMismatch(format!(
            "divergence needs {} components, got {}",
            v.grid.dim,
            v.comps.len()
        )));
    }
    let raw: Vec<Vec<f64>> = v.comps.iter().map(|c| c.values.clone()).collect();
    Ok(ScalarField::from_raw(&v.grid, v.grid.div_raw(&raw, false)))
}

/// Divergence after 2/3 truncation of the flux spectrum.
pub fn div_dealiased(v: &VectorField) -> Result<ScalarField> {
    if v.comps.len() != v.grid.dim {
        return Err(Error::ShapeMismatch(format!(
            "divergence needs {} components, got {}",
            v.grid.dim,
            v.comps.len()
        )));
    }
    let raw: Vec<Vec<f64>> = v.comps.iter().map(|c| c.values.clone()).collect();
    Ok(ScalarField::from_raw(&v.grid, v.grid.div_raw(&raw, true)))
}

pub fn laplace(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    ScalarField::from_raw(g, g.multiplier_raw(&f.values, |i| g.symbol()[i]))
}

/// `d f / d xi_axis`.
pub fn partial(f: &ScalarField, axis: usize) -> Result<ScalarField> {
    if axis >= f.grid.dim {
        return Err(Error::ShapeMismatch(format!(
            "axis {axis} out of range for d={}",
            f.grid.dim
        )));
    }
    let g = &f.grid;
    let mut spec = g.forward_raw(&f.values);
    spec.iter_mut()
        .enumerate()
        .for_each(|(i, c)| *c *= Complex64::new(0.0, g.wave(axis)[i]));
    Ok(ScalarField::from_raw(g, g.inverse_raw(spec)))
}

/// `(f, g)_H = h^d sum f g`.
pub fn inner_h(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.grid.check(&g.grid)?;
    Ok(f.grid.cell_volume() * compensated_sum(f.values.iter().zip(&g.values).map(|(a, b)| a * b)))
}

fn matrix_form(u: &ScalarField, v: &ScalarField, m: &MatrixField) -> Result<f64> {
    u.grid.check(&v.grid)?;
    u.grid.check(&m.grid)?;
    if m.cols != u.grid.dim {
        return Err(Error::ShapeMismatch(format!(
            "coefficient has {} columns, grid dimension is {}",
            m.cols, u.grid.dim
        )));
    }
    let gu = u.grid.grad_raw(&u.values);
    let gv = if std::ptr::eq(u, v) {
        gu.clone()
    } else {
        v.grid.grad_raw(&v.values)
    };
    let d = u.grid.dim;
    let terms = (0..u.grid.len()).map(|p| {
        (0..m.rows)
            .map(|r| {
                let lu: f64 = (0..d).map(|j| m.at(r, j, p) * gu[j][p]).sum();
                let lv: f64 = (0..d).map(|j| m.at(r, j, p) * gv[j][p]).sum();
                lu * lv
            })
            .sum::<f64>()
    });
    Ok(u.grid.cell_volume() * compensated_sum(terms))
}

/// `A(u, v) = int <a grad u, a grad v>`.
pub fn form_a(u: &ScalarField, v: &ScalarField, coeffs: &CoefficientSet) -> Result<f64> {
    matrix_form(u, v, coeffs.a())
}

/// `B(u, v) = int <b grad u, b grad v>`.
pub fn form_b(u: &ScalarField, v: &ScalarField, coeffs: &CoefficientSet) -> Result<f64> {
    matrix_form(u, v, coeffs.b())
}

/// Flat Dirichlet energy `int |grad u|^2`.
pub fn dirichlet_energy(u: &ScalarField) -> f64 {
    let g = &u.grid;
    let spec = g.forward_raw(&u.values);
    compensated_sum(spec.iter().enumerate().map(|(i, c)| -g.symbol()[i] * c.norm_sqr()))
}

/// Random real field with modes `|k_j| <= max_mode` and unit `S = H^1` norm.
pub fn random_band_limited<R: Rng + ?Sized>(grid: &PeriodicGrid, max_mode: usize, rng: &mut R) -> ScalarField {
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    let m = max_mode as i64;
    let k1_range = if grid.dim == 2 { -m..=m } else { 0..=0 };
    for k0 in -m..=m {
        for k1 in k1_range.clone() {
            if (k0, k1) == (0, 0) {
                continue;
            }
            // Fill one member of each conjugate pair.
            if k0 < 0 || (k0 == 0 && k1 < 0) {
                continue;
            }
            let c = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            spec[grid.spec_index([k0, k1])] = c;
            spec[grid.spec_index([-k0, -k1])] = c.conj();
        }
    }
    spec[0] = Complex64::new(rng.random::<f64>() - 0.5, 0.0);
    let f = ScalarField::from_raw(grid, grid.inverse_raw(spec));
    let s_norm = (f.norm_h2() + dirichlet_energy(&f)).sqrt();
    f.scale(1.0 / s_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &PeriodicGrid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grid.sample(|_| rng_value(&mut rng))
    }

    fn rng_value(rng: &mut ChaCha8Rng) -> f64 {
        rng.random::<f64>() * 2.0 - 1.0
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(PeriodicGrid::new(3, 16).is_err());
        assert!(PeriodicGrid::new(1, 4).is_err());
        assert!(PeriodicGrid::new(1, 24).is_err());
        assert!(PeriodicGrid::new(2, 8).is_ok());
    }

    #[test]
    fn constant_field_has_unit_mean_mode() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let s = dft(&g.constant(1.0)).unwrap();
        assert!((s.at([0, 0]) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        let rest: f64 = s.coeffs().iter().skip(1).map(|c| c.norm()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn single_harmonic_has_two_modes() {
        let g = PeriodicGrid::new(1, 32).unwrap();
        let f = g.sample(|x| (2.0 * PI * x[0]).sin());
        let s = dft(&f).unwrap();
        for (i, c) in s.coeffs().iter().enumerate() {
            let k = g.mode(i)[0];
            if k.abs() == 1 {
                assert!((c.norm() - 0.5).abs() < 1e-14);
            } else {
                assert!(c.norm() < 1e-14, "mode {k} = {c}");
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for d in [1, 2] {
            let g = PeriodicGrid::new(d, 32).unwrap();
            let f = random_field(&g, 7);
            let s = dft(&f).unwrap();
            let back = idft(&s);
            let err = f.sub(&back).unwrap().max_abs();
            assert!(err < 1e-12, "d={d} round-trip error {err}");
            assert!((f.norm_h2() - s.energy()).abs() < 1e-12);
        }
    }

    #[test]
    fn dft_rejects_non_finite() {
        let g = PeriodicGrid::new(1, 8).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(g.field(v.clone()).is_err());
        let f = ScalarField::from_raw(&g, v);
        assert_eq!(dft(&f).unwrap_err(), Error::NonFinite { index: 3 });
    }

    #[test]
    fn laplace_of_sine() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let f = g.sample(|x| (2.0 * PI * x[0]).sin());
        let lf = laplace(&f);
        let expect = f.scale(-4.0 * PI * PI);
        assert!(lf.sub(&expect).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = PeriodicGrid::new(2, 16).unwrap();
        let v = grad(&g.constant(3.5));
        assert!(v.components().iter().all(|c| c.max_abs() < 1e-14));
    }

    #[test]
    fn div_grad_is_laplace_and_mean_free() {
        for d in [1, 2] {
            let g = PeriodicGrid::new(d, 64).unwrap();
            let f = random_field(&g, 11);
            let dg = div(&grad(&f)).unwrap();
            let lf = laplace(&f);
            // Random grid data has O(n^2) spectral derivatives, so compare relatively.
            let scale = lf.max_abs();
            assert!(dg.sub(&lf).unwrap().max_abs() < 1e-12 * scale);
            assert!(lf.integral().abs() < 1e-12);
            assert!(dg.integral().abs() < 1e-12 * scale);
            for c in grad(&f).components() {
                assert!(c.integral().abs() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn h_norm_is_refinement_consistent() {
        let f = |x: [f64; 2]| (2.0 * PI * x[0]).sin() + 0.5 * (4.0 * PI * x[1]).cos() + 0.2;
        let a = PeriodicGrid::new(2, 16).unwrap().sample(f).norm_h2();
        let b = PeriodicGrid::new(2, 32).unwrap().sample(f).norm_h2();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn div_checks_component_count() {
        let g = PeriodicGrid::new(2, 8).unwrap();
        let v = VectorField::new(vec![g.zeros()]).unwrap();
        assert!(matches!(div(&v), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = PeriodicGrid::new(1, 8).unwrap().zeros();
        let b = PeriodicGrid::new(1, 16).unwrap().zeros();
        assert!(matches!(inner_h(&a, &b), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn band_limited_fields_have_unit_s_norm() {
        let g = PeriodicGrid::new(2, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_band_limited(&g, 8, &mut rng);
        let s = dft(&f).unwrap();
        for (i, c) in s.coeffs().iter().enumerate() {
            let k = g.mode(i);
            if k[0].abs() > 8 || k[1].abs() > 8 {
                assert!(c.norm() < 1e-14);
            }
        }
        assert!((f.norm_h2() + dirichlet_energy(&f) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dealias_keeps_two_thirds() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let f = g.sample(|x| (2.0 * PI * 21.0 * x[0]).sin() + (2.0 * PI * 22.0 * x[0]).sin());
        let mut s = dft(&f).unwrap();
        s.dealias();
        let kept = idft(&s);
        let expect = g.sample(|x| (2.0 * PI * 21.0 * x[0]).sin());
        assert!(kept.sub(&expect).unwrap().max_abs() < 1e-12);
    }
}
