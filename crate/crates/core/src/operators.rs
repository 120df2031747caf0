//! Microscopic linear algebra on the periodic lattice.
//!
//! The two circulant operators driving the dynamics are
//!
//! ```text
//! (A x)_i = n^2 (2 x_i - x_{i+1} - x_{i-1})      (scaled discrete Laplacian)
//! (J x)_i = (n/2) (x_{i+1} - x_{i-1})            (scaled discrete derivative)
//! ```
//!
//! with indices mod `n`. `A` factors as `A = D D^t` with
//! `(D x)_i = n (x_i - x_{i+1})`, and `J = (D^t - D)/2`. Both are circulant,
//! hence simultaneously diagonalized by the discrete Fourier basis with
//! eigenvalues
//!
//! ```text
//! lambda_k(A) = 4 n^2 sin^2(pi k / n),   lambda_k(J) = i n sin(2 pi k / n).
//! ```
//!
//! `A` is positive definite on the mean-zero subspace (spectral gap
//! `4 n^2 sin^2(pi/n)`, tending to `4 pi^2`), and its inverse is computed
//! spectrally by zeroing the `k = 0` mode. `J A^{-1}` additionally has an
//! `O(n)` closed form on mean-zero vectors built from cumulative sums; see
//! [`LatticeOps::apply_j_a_inv`].

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Absolute tolerance on the per-site mean for "mean-zero" inputs.
pub const EPS_MEAN: f64 = 1e-9;

/// Relative residual tolerance of the spectral solver.
pub const EPS_SOLVE: f64 = 1e-10;

/// Number of lattice sites. Rejects `n < 3`: on `n = 2` periodicity makes
/// `J` identically zero and the asymmetric mechanism untestable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeDim(usize);

impl LatticeDim {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::LatticeTooSmall(n));
        }
        Ok(LatticeDim(n))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0
    }
}

/// A length-`n` real vector of spin values on the periodic lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroVector {
    values: Vec<f64>,
}

impl MicroVector {
    pub fn new(values: Vec<f64>) -> Self {
        MicroVector { values }
    }

    pub fn zeros(n: usize) -> Self {
        MicroVector { values: vec![0.0; n] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Checks the mean-zero flag: `|sum x_i| <= n * tol`.
    pub fn ensure_mean_zero(&self, tol: f64) -> Result<()> {
        let mean_abs = self.mean().abs();
        if mean_abs > tol {
            return Err(Error::NotMeanZero { mean_abs, tol });
        }
        Ok(())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &MicroVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl From<Vec<f64>> for MicroVector {
    fn from(values: Vec<f64>) -> Self {
        MicroVector::new(values)
    }
}

/// Shared FFT machinery for circulant operators of size `n`.
///
/// Plans are immutable after construction and safe to share across threads.
#[derive(Clone)]
pub struct CirculantSpectrum {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantSpectrum").field("n", &self.n).finish()
    }
}

impl CirculantSpectrum {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        CirculantSpectrum { n, fwd, inv }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Eigenvalue of `A` on Fourier mode `k`: `4 n^2 sin^2(pi k / n)`.
    #[inline]
    pub fn lap_eigenvalue(&self, k: usize) -> f64 {
        let n = self.n as f64;
        let s = (std::f64::consts::PI * k as f64 / n).sin();
        4.0 * n * n * s * s
    }

    /// Imaginary part of the eigenvalue of `J` on mode `k`: `n sin(2 pi k / n)`.
    #[inline]
    pub fn deriv_eigenvalue(&self, k: usize) -> f64 {
        let n = self.n as f64;
        n * (2.0 * std::f64::consts::PI * k as f64 / n).sin()
    }

    /// Unnormalized forward DFT of a real vector.
    pub fn forward(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> =
            x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Inverse DFT (including the `1/n` normalization), real part.
    pub fn inverse_real(&self, mut x_hat: Vec<Complex<f64>>) -> Vec<f64> {
        self.inv.process(&mut x_hat);
        let scale = 1.0 / self.n as f64;
        x_hat.iter().map(|c| c.re * scale).collect()
    }

    /// Applies `f(lambda_k)` to each Fourier coefficient of `x`, where the
    /// mode-`k` multiplier is supplied by the closure, and transforms back.
    pub fn apply_multiplier<F>(&self, x: &[f64], f: F) -> Vec<f64>
    where
        F: Fn(usize) -> Complex<f64>,
    {
        let mut x_hat = self.forward(x);
        for (k, c) in x_hat.iter_mut().enumerate() {
            *c *= f(k);
        }
        self.inverse_real(x_hat)
    }
}

/// All microscopic operators for a fixed lattice size, with precomputed
/// spectral tables. Pure functions of their inputs; freely shareable.
#[derive(Clone, Debug)]
pub struct LatticeOps {
    dim: LatticeDim,
    spectrum: CirculantSpectrum,
}

impl LatticeOps {
    pub fn new(dim: LatticeDim) -> Self {
        LatticeOps {
            spectrum: CirculantSpectrum::new(dim.n()),
            dim,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dim.n()
    }

    #[inline]
    pub fn dim(&self) -> LatticeDim {
        self.dim
    }

    #[inline]
    pub fn spectrum(&self) -> &CirculantSpectrum {
        &self.spectrum
    }

    /// Spectral gap of `A` on the mean-zero subspace: `4 n^2 sin^2(pi/n)`.
    pub fn spectral_gap(&self) -> f64 {
        self.spectrum.lap_eigenvalue(1)
    }

    fn check_dim(&self, x: &MicroVector) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `(A x)_i = n^2 (2 x_i - x_{i+1} - x_{i-1})`, indices mod `n`.
    pub fn apply_a(&self, x: &MicroVector) -> Result<MicroVector> {
        self.check_dim(x)?;
        let n = self.n();
        let s = (n * n) as f64;
        let v = x.as_slice();
        let out = (0..n)
            .map(|i| {
                let ip = if i + 1 == n { 0 } else { i + 1 };
                let im = if i == 0 { n - 1 } else { i - 1 };
                s * (2.0 * v[i] - v[ip] - v[im])
            })
            .collect();
        Ok(MicroVector::new(out))
    }

    /// `(J x)_i = (n/2) (x_{i+1} - x_{i-1})`, indices mod `n`.
    pub fn apply_j(&self, x: &MicroVector) -> Result<MicroVector> {
        self.check_dim(x)?;
        let n = self.n();
        let s = n as f64 / 2.0;
        let v = x.as_slice();
        let out = (0..n)
            .map(|i| {
                let ip = if i + 1 == n { 0 } else { i + 1 };
                let im = if i == 0 { n - 1 } else { i - 1 };
                s * (v[ip] - v[im])
            })
            .collect();
        Ok(MicroVector::new(out))
    }

    /// `(D x)_i = n (x_i - x_{i+1})`; `A = D D^t`.
    pub fn apply_d(&self, x: &MicroVector) -> Result<MicroVector> {
        self.check_dim(x)?;
        let n = self.n();
        let s = n as f64;
        let v = x.as_slice();
        let out = (0..n)
            .map(|i| {
                let ip = if i + 1 == n { 0 } else { i + 1 };
                s * (v[i] - v[ip])
            })
            .collect();
        Ok(MicroVector::new(out))
    }

    /// `(D^t x)_i = n (x_i - x_{i-1})`.
    pub fn apply_dt(&self, x: &MicroVector) -> Result<MicroVector> {
        self.check_dim(x)?;
        let n = self.n();
        let s = n as f64;
        let v = x.as_slice();
        let out = (0..n)
            .map(|i| {
                let im = if i == 0 { n - 1 } else { i - 1 };
                s * (v[i] - v[im])
            })
            .collect();
        Ok(MicroVector::new(out))
    }

    /// Combined drift operator `(A + J) x` in one pass.
    pub fn apply_a_plus_j(&self, x: &MicroVector) -> Result<MicroVector> {
        self.check_dim(x)?;
        let n = self.n();
        let sa = (n * n) as f64;
        let sj = n as f64 / 2.0;
        let v = x.as_slice();
        let out = (0..n)
            .map(|i| {
                let ip = if i + 1 == n { 0 } else { i + 1 };
                let im = if i == 0 { n - 1 } else { i - 1 };
                sa * (2.0 * v[i] - v[ip] - v[im]) + sj * (v[ip] - v[im])
            })
            .collect();
        Ok(MicroVector::new(out))
    }

    /// Solves `A y = x` for mean-zero `x`, returning the mean-zero solution.
    ///
    /// Spectral: divide mode `k != 0` by `4 n^2 sin^2(pi k / n)` and zero the
    /// constant mode.
    pub fn solve_a_inv(&self, x: &MicroVector) -> Result<MicroVector> {
        self.check_dim(x)?;
        x.ensure_mean_zero(EPS_MEAN)?;
        let out = self.spectrum.apply_multiplier(x.as_slice(), |k| {
            if k == 0 {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(1.0 / self.spectrum.lap_eigenvalue(k), 0.0)
            }
        });
        Ok(MicroVector::new(out))
    }

    /// `J A^{-1} x` for mean-zero `x` via the closed form
    /// `(J A^{-1} x)_i = -(1/n) (C_i - x_i / 2)` with `C_i = sum_{j<=i} x_j`,
    /// the half-difference of the triangular cumulative-sum inverses of `D`
    /// and `D^t`. Those triangular inverses are inverses only modulo
    /// constants, so the result is recentered onto the mean-zero range of `J`.
    pub fn apply_j_a_inv(&self, x: &MicroVector) -> Result<MicroVector> {
        self.check_dim(x)?;
        x.ensure_mean_zero(EPS_MEAN)?;
        let n = self.n() as f64;
        let mut out = Vec::with_capacity(self.n());
        let mut cum = 0.0;
        for &v in x.as_slice() {
            cum += v;
            out.push(-(cum - 0.5 * v) / n);
        }
        let mean = out.iter().sum::<f64>() / n;
        for v in &mut out {
            *v -= mean;
        }
        Ok(MicroVector::new(out))
    }

    /// The penalized quadratic form `(1/n) <A^{-1} x, x>` for mean-zero `x`.
    ///
    /// Nonnegative; zero only at `x = 0`. Computed via Parseval:
    /// `(1/n^2) sum_{k != 0} |x_hat_k|^2 / lambda_k(A)`.
    pub fn quad_form_a_inv(&self, x: &MicroVector) -> Result<f64> {
        self.check_dim(x)?;
        x.ensure_mean_zero(EPS_MEAN)?;
        let x_hat = self.spectrum.forward(x.as_slice());
        let n = self.n() as f64;
        let mut acc = 0.0;
        for (k, c) in x_hat.iter().enumerate().skip(1) {
            acc += c.norm_sqr() / self.spectrum.lap_eigenvalue(k);
        }
        Ok(acc / (n * n))
    }
}

/// Configuration for the randomized parts of [`check_assumptions`].
#[derive(Clone, Copy, Debug)]
pub struct AssumptionCheckConfig {
    /// Number of random vectors for the `-J^2 <= c A` check.
    pub batch: usize,
    pub seed: u64,
}

impl Default for AssumptionCheckConfig {
    fn default() -> Self {
        AssumptionCheckConfig { batch: 1000, seed: 0x5eed }
    }
}

/// Margins and verdicts for the operator-level assumptions.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AssumptionReport {
    pub n: usize,
    /// Max of `|J_{ij} + J_{ji}|` over the dense matrix (exact antisymmetry).
    pub antisymmetry_residual: f64,
    /// Max abs entry of `AJ - JA`; must be `<= 1e-9 n^2`.
    pub commutation_residual: f64,
    pub commutation_tol: f64,
    /// Max over the random batch of `<-J^2 x, x> / <A x, x>`; must be `<= 1`.
    pub j2_over_a_max_ratio: f64,
    /// Spectral gap of `A` on the mean-zero subspace: `4 n^2 sin^2(pi/n)`.
    pub spectral_gap: f64,
    /// Its large-`n` limit `4 pi^2`, for reference.
    pub spectral_gap_limit: f64,
    pub antisymmetry_ok: bool,
    pub commutation_ok: bool,
    pub j2_bound_ok: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.antisymmetry_ok && self.commutation_ok && self.j2_bound_ok
    }
}

/// Rounding slack on the `c = 1` ratio check; the bound is exact in exact
/// arithmetic with strict margin off the `k = 0` mode.
const C_RATIO_SLACK: f64 = 1e-12;

/// Executable checks of the operator assumptions: `J` antisymmetric, `A` and
/// `J` commute, `<-J^2 x, x> <= <A x, x>` (constant `c = 1`), and the
/// spectral gap of `A` on the mean-zero subspace.
pub fn check_assumptions(ops: &LatticeOps, cfg: &AssumptionCheckConfig) -> Result<AssumptionReport> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let n = ops.n();

    // Dense antisymmetry and commutation residuals, column by column through
    // the stencils. O(n^2) work, O(n) memory per column pair.
    let mut anti = 0.0f64;
    let mut comm = 0.0f64;
    let mut j_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for c in 0..n {
        let mut e = MicroVector::zeros(n);
        e.as_mut_slice()[c] = 1.0;
        let jc = ops.apply_j(&e)?;
        let ajc = ops.apply_a(&jc)?;
        let ac = ops.apply_a(&e)?;
        let jac = ops.apply_j(&ac)?;
        for i in 0..n {
            comm = comm.max((ajc.as_slice()[i] - jac.as_slice()[i]).abs());
        }
        j_cols.push(jc.into_vec());
    }
    for (i, row) in j_cols.iter().enumerate() {
        for (j, col) in j_cols.iter().enumerate() {
            anti = anti.max((col[i] + row[j]).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..cfg.batch {
        let x = MicroVector::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let jx = ops.apply_j(&x)?;
        let ax = ops.apply_a(&x)?;
        let num = jx.dot(&jx); // <-J^2 x, x> = |Jx|^2
        let den = ax.dot(&x);
        if den > 0.0 {
            max_ratio = max_ratio.max(num / den);
        }
    }

    let commutation_tol = 1e-9 * (n * n) as f64;
    Ok(AssumptionReport {
        n,
        antisymmetry_residual: anti,
        commutation_residual: comm,
        commutation_tol,
        j2_over_a_max_ratio: max_ratio,
        spectral_gap: ops.spectral_gap(),
        spectral_gap_limit: 4.0 * std::f64::consts::PI * std::f64::consts::PI,
        antisymmetry_ok: anti == 0.0,
        commutation_ok: comm <= commutation_tol,
        j2_bound_ok: max_ratio <= 1.0 + C_RATIO_SLACK,
    })
}
