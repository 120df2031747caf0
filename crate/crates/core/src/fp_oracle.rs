//! Desk-scale ground truth: exact Ornstein-Uhlenbeck moment dynamics at any
//! lattice size, and a dense Fokker-Planck solver at `N = 3`.
//!
//! With `delta psi = 0` the SDE is linear and its law stays Gaussian:
//!
//! ```text
//! dm/dt     = -(A + J) m
//! dSigma/dt = -(A + J) Sigma - Sigma (A + J)^t + 2 A
//! ```
//!
//! Both equations diagonalize in the Fourier basis of the circulants
//! (eigenvalues `lambda_k = 4 n^2 sin^2(pi k/n) + i n sin(2 pi k/n)`), giving
//! closed-form propagation with no time-integration error. The identity
//! covariance on the mean-zero subspace is an exact fixed point, which is
//! the statement that the antisymmetric part does not change the invariant
//! measure.
//!
//! At `N = 3` the mean-zero subspace is two-dimensional, and the full
//! Fokker-Planck equation `d_t(f mu) = div[mu (A + J) grad f]` is solved by
//! a conservative finite-volume scheme in the orthonormal Fourier
//! coordinates of that plane. This is the largest size where grid ground
//! truth is cheap, and the smallest where `J` is not identically zero.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;

use crate::coarse_grain::{CoarseGrain, MacroVector};
use crate::error::{Error, Result};
use crate::operators::{LatticeOps, MicroVector};
use crate::thermo::Potential;

/// Gaussian moments of the lattice law at a fixed time, restricted to the
/// mean-zero subspace (the `k = 0` Fourier mode of mean and covariance is
/// projected out).
#[derive(Clone, Debug)]
pub struct OuMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub time: f64,
}

/// Forward circulant similarity `C = F Sigma Ftilde` (unnormalized FFT on
/// columns, unnormalized inverse FFT on rows).
fn cov_to_fourier(ops: &LatticeOps, cov: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let n = ops.n();
    let sp = ops.spectrum();
    let mut work = vec![Complex::new(0.0, 0.0); n * n];
    // Columns: forward FFT.
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| cov[(i, j)]).collect();
        let hat = sp.forward(&col);
        for i in 0..n {
            work[i * n + j] = hat[i];
        }
    }
    // Rows: unnormalized inverse FFT.
    let mut planner = rustfft::FftPlanner::new();
    let inv = planner.plan_fft_inverse(n);
    for i in 0..n {
        let row = &mut work[i * n..(i + 1) * n];
        inv.process(row);
    }
    work
}

/// Inverse transform `Sigma = Ftilde C F / n^2`, real part, symmetrized.
fn cov_from_fourier(ops: &LatticeOps, c: &[Complex<f64>]) -> DMatrix<f64> {
    let n = ops.n();
    let mut planner = rustfft::FftPlanner::new();
    let inv = planner.plan_fft_inverse(n);
    let fwd = planner.plan_fft_forward(n);
    let mut work = c.to_vec();
    // Columns: unnormalized inverse FFT.
    for j in 0..n {
        let mut col: Vec<Complex<f64>> = (0..n).map(|i| work[i * n + j]).collect();
        inv.process(&mut col);
        for i in 0..n {
            work[i * n + j] = col[i];
        }
    }
    // Rows: forward FFT.
    for i in 0..n {
        let row = &mut work[i * n..(i + 1) * n];
        fwd.process(row);
    }
    let scale = 1.0 / (n * n) as f64;
    let raw = DMatrix::from_fn(n, n, |i, j| work[i * n + j].re * scale);
    (&raw + raw.transpose()) * 0.5
}

/// Complex drift eigenvalue of `A + J` on mode `k`.
fn drift_eigenvalue(ops: &LatticeOps, k: usize) -> Complex<f64> {
    Complex::new(
        ops.spectrum().lap_eigenvalue(k),
        ops.spectrum().deriv_eigenvalue(k),
    )
}

/// Exact propagation of Gaussian moments under the linear (`delta psi = 0`)
/// dynamics: spectral closed form, no time-stepping error.
pub fn ou_propagate(
    ops: &LatticeOps,
    m0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    t: f64,
) -> Result<OuMoments> {
    let n = ops.n();
    if m0.len() != n || sigma0.nrows() != n || sigma0.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m0.len() });
    }

    // Mean: multiply mode k by exp(-lambda_k t), dropping the k = 0 mode.
    let sp = ops.spectrum();
    let mut m_hat = sp.forward(m0.as_slice());
    for (k, c) in m_hat.iter_mut().enumerate() {
        *c = if k == 0 {
            Complex::new(0.0, 0.0)
        } else {
            *c * (-drift_eigenvalue(ops, k) * t).exp()
        };
    }
    let mean = DVector::from_vec(sp.inverse_real(m_hat));

    // Covariance: entrywise in the Fourier frame,
    // C_kl(t) = e^{-(lambda_k + conj(lambda_l)) t} (C_kl(0) - S_kl) + S_kl,
    // with stationary S = n Id off the constant mode.
    let mut c = cov_to_fourier(ops, sigma0);
    for k in 0..n {
        for l in 0..n {
            let idx = k * n + l;
            if k == 0 || l == 0 {
                c[idx] = Complex::new(0.0, 0.0);
                continue;
            }
            let target = if k == l {
                Complex::new(n as f64, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
            let rate = drift_eigenvalue(ops, k) + drift_eigenvalue(ops, l).conj();
            c[idx] = (c[idx] - target) * (-rate * t).exp() + target;
        }
    }
    let cov = cov_from_fourier(ops, &c);

    Ok(OuMoments { mean, cov, time: t })
}

/// Defect of the Lyapunov equation at the propagated moments:
/// `max |dSigma/dt + (A+J) Sigma + Sigma (A+J)^t - 2 A_proj|` entrywise,
/// with the time derivative taken from the closed form.
pub fn ou_lyapunov_residual(ops: &LatticeOps, moments: &OuMoments) -> Result<f64> {
    let n = ops.n();
    // dSigma/dt from the spectral form.
    let mut c = cov_to_fourier(ops, &moments.cov);
    for k in 0..n {
        for l in 0..n {
            let idx = k * n + l;
            if k == 0 || l == 0 {
                c[idx] = Complex::new(0.0, 0.0);
                continue;
            }
            let target = if k == l {
                Complex::new(n as f64, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
            let rate = drift_eigenvalue(ops, k) + drift_eigenvalue(ops, l).conj();
            c[idx] = -rate * (c[idx] - target);
        }
    }
    let dsigma = cov_from_fourier(ops, &c);

    // Right-hand side in real space, with A and A+J applied columnwise and
    // the constant mode projected out of 2A.
    let apply_cols = |m: &DMatrix<f64>, f: &dyn Fn(&MicroVector) -> MicroVector| -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let col = MicroVector::new((0..n).map(|i| m[(i, j)]).collect());
            let img = f(&col);
            for i in 0..n {
                out[(i, j)] = img.as_slice()[i];
            }
        }
        out
    };
    let aj = |x: &MicroVector| ops.apply_a_plus_j(x).expect("dim checked");
    let cs = apply_cols(&moments.cov, &aj); // (A+J) Sigma
    let cst = apply_cols(&moments.cov.transpose(), &aj).transpose(); // Sigma (A+J)^t
    let mut two_a = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut e = MicroVector::zeros(n);
        e.as_mut_slice()[j] = 1.0;
        let col = ops.apply_a(&e)?;
        for i in 0..n {
            two_a[(i, j)] = 2.0 * col.as_slice()[i];
        }
    }
    let resid = &dsigma + cs + cst - two_a;
    Ok(resid.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

/// Exact `Theta` for a Gaussian law against profile `eta`:
/// `(1/2n)[Tr(A^{-1} Sigma) + d . A^{-1} d]` with `d = mean - N P^t eta`.
pub fn ou_theta_exact(
    ops: &LatticeOps,
    cg: &CoarseGrain,
    moments: &OuMoments,
    eta: &MacroVector,
) -> Result<f64> {
    let n = ops.n();
    let c = cov_to_fourier(ops, &moments.cov);
    let mut trace = 0.0;
    for k in 1..n {
        trace += c[k * n + k].re / (n as f64 * ops.spectrum().lap_eigenvalue(k));
    }

    let lifted = cg.lift_npt(eta)?;
    let mut d: Vec<f64> = moments
        .mean
        .iter()
        .zip(lifted.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let dm = d.iter().sum::<f64>() / n as f64;
    for v in &mut d {
        *v -= dm;
    }
    let quad = ops.quad_form_a_inv(&MicroVector::new(d))?; // (1/n) <A^{-1} d, d>

    Ok(0.5 * (trace / n as f64 + quad))
}

/// `Theta` of the stationary law (`Sigma = Id` on the mean-zero subspace)
/// against `eta = 0`: the trace formula `(1/2n) sum_{k != 0} 1/lambda_k(A)`.
pub fn stationary_theta(ops: &LatticeOps) -> f64 {
    let n = ops.n();
    let sum: f64 = (1..n).map(|k| 1.0 / ops.spectrum().lap_eigenvalue(k)).sum();
    sum / (2.0 * n as f64)
}

/// Orthonormal Fourier basis of the mean-zero plane of `R^3`, as columns.
fn basis3() -> DMatrix<f64> {
    let r = (2.0f64 / 3.0).sqrt();
    DMatrix::from_column_slice(
        3,
        2,
        &[
            r,
            r * (2.0 * std::f64::consts::PI / 3.0).cos(),
            r * (4.0 * std::f64::consts::PI / 3.0).cos(),
            0.0,
            r * (2.0 * std::f64::consts::PI / 3.0).sin(),
            r * (4.0 * std::f64::consts::PI / 3.0).sin(),
        ],
    )
}

/// `A` restricted to the plane is `27 Id`; `J` restricted is `omega R` with
/// `omega = 3 sin(2 pi/3) = 3 sqrt(3)/2` and `R` the rotation generator.
const A3_DIAG: f64 = 27.0;

fn omega3() -> f64 {
    3.0 * (2.0 * std::f64::consts::PI / 3.0).sin()
}

/// Dense Fokker-Planck oracle on the mean-zero plane of the `N = 3` lattice.
///
/// Cell-centered grid on `[-L, L]^2`; unknowns are densities `f` relative to
/// the invariant measure. Fluxes `mu (A + s J) grad f` are assembled on faces
/// so interior mass moves by telescoping differences; at the boundary the
/// ghost value `f = 1` (Dirichlet on `f - 1`) leaks mass only through tails
/// that the box radius makes negligible, and the leak is monitored.
pub struct FpOracle {
    half_extent: f64,
    cells: usize,
    h: f64,
    /// Normalized invariant weights at cell centers, `mu_ij h^2` summing to 1.
    mu_cell: Vec<f64>,
    /// `mu` density at cell centers (unnormalized by `Z`).
    mu_raw: Vec<f64>,
    /// `mu` density at vertical faces, `(nc+1) * nc`, row-major by `iy`.
    mu_face_x: Vec<f64>,
    /// `mu` density at horizontal faces, `nc * (nc+1)`.
    mu_face_y: Vec<f64>,
    /// Scaling `s` of the antisymmetric part.
    j_scale: f64,
}

/// Evolving state of the oracle: density values and current time.
#[derive(Clone, Debug)]
pub struct FpState {
    pub f: Vec<f64>,
    pub time: f64,
}

impl FpOracle {
    pub fn new(potential: Potential, half_extent: f64, cells: usize, j_scale: f64) -> Result<Self> {
        if cells < 8 || half_extent <= 0.0 {
            return Err(Error::Config(format!(
                "FP grid too small: cells = {cells}, L = {half_extent}"
            )));
        }
        let h = 2.0 * half_extent / cells as f64;
        let q = basis3();
        let mu_at = move |x: f64, y: f64| -> f64 {
            let mut ham = 0.0;
            for i in 0..3 {
                ham += potential.psi(q[(i, 0)] * x + q[(i, 1)] * y);
            }
            (-ham).exp()
        };
        let mut mu_raw = vec![0.0f64; cells * cells];
        for iy in 0..cells {
            for ix in 0..cells {
                let z = Self::center(half_extent, h, ix, iy);
                mu_raw[iy * cells + ix] = mu_at(z.0, z.1);
            }
        }
        let total: f64 = mu_raw.iter().sum::<f64>() * h * h;
        let mu_cell = mu_raw.iter().map(|v| v * h * h / total).collect();

        let mut mu_face_x = vec![0.0f64; (cells + 1) * cells];
        for iy in 0..cells {
            for ix in 0..=cells {
                let xf = -half_extent + ix as f64 * h;
                let yf = -half_extent + (iy as f64 + 0.5) * h;
                mu_face_x[iy * (cells + 1) + ix] = mu_at(xf, yf);
            }
        }
        let mut mu_face_y = vec![0.0f64; cells * (cells + 1)];
        for iy in 0..=cells {
            for ix in 0..cells {
                let xf = -half_extent + (ix as f64 + 0.5) * h;
                let yf = -half_extent + iy as f64 * h;
                mu_face_y[iy * cells + ix] = mu_at(xf, yf);
            }
        }

        Ok(FpOracle {
            half_extent,
            cells,
            h,
            mu_cell,
            mu_raw,
            mu_face_x,
            mu_face_y,
            j_scale,
        })
    }

    #[inline]
    fn center(half_extent: f64, h: f64, ix: usize, iy: usize) -> (f64, f64) {
        (
            -half_extent + (ix as f64 + 0.5) * h,
            -half_extent + (iy as f64 + 0.5) * h,
        )
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn mesh(&self) -> f64 {
        self.h
    }

    pub fn uniform_state(&self) -> FpState {
        FpState { f: vec![1.0; self.cells * self.cells], time: 0.0 }
    }

    /// Initial density from a Gaussian law `N(mean, cov)` in plane
    /// coordinates, normalized against the discrete invariant measure.
    pub fn gaussian_state(&self, mean: &[f64; 2], cov: &DMatrix<f64>) -> Result<FpState> {
        let inv = cov
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Factorization("singular FP initial covariance".into()))?;
        let mut f = vec![0.0f64; self.cells * self.cells];
        for iy in 0..self.cells {
            for ix in 0..self.cells {
                let idx = iy * self.cells + ix;
                let z = Self::center(self.half_extent, self.h, ix, iy);
                let d = DVector::from_column_slice(&[z.0 - mean[0], z.1 - mean[1]]);
                let law = (-0.5 * d.dot(&(&inv * &d))).exp();
                f[idx] = law / self.mu_raw[idx];
            }
        }
        let mass: f64 = f.iter().zip(&self.mu_cell).map(|(a, b)| a * b).sum();
        for v in &mut f {
            *v /= mass;
        }
        Ok(FpState { f, time: 0.0 })
    }

    /// Largest stable time step for the explicit scheme. The factor 16
    /// absorbs the face-to-center ratio of the invariant weights across the
    /// box.
    pub fn max_dt(&self) -> f64 {
        self.h * self.h / (16.0 * (A3_DIAG + self.j_scale.abs() * omega3()))
    }

    /// One conservative finite-volume step.
    pub fn step(&self, state: &mut FpState, dt: f64) -> Result<()> {
        if dt > self.max_dt() * (1.0 + 1e-12) {
            return Err(Error::NumericalAbort(format!(
                "FP time step {dt} exceeds stability bound {}",
                self.max_dt()
            )));
        }
        let nc = self.cells;
        let h = self.h;
        let om = self.j_scale * omega3();
        // K = 27 I + om R with R = [[0, 1], [-1, 0]].
        let (kxx, kxy, kyx, kyy) = (A3_DIAG, om, -om, A3_DIAG);

        let f = &state.f;
        let get = |ix: i64, iy: i64| -> f64 {
            if ix < 0 || iy < 0 || ix >= nc as i64 || iy >= nc as i64 {
                1.0 // Dirichlet ghost on f - 1 = 0
            } else {
                f[iy as usize * nc + ix as usize]
            }
        };

        // Vertical faces: flux_x[(iy, ix)] across the face between (ix-1, iy)
        // and (ix, iy), for ix = 0..=nc.
        let mut new_f = state.f.clone();
        let mut boundary_leak = 0.0;

        let mut flux_x = vec![0.0f64; (nc + 1) * nc];
        for iy in 0..nc {
            for ix in 0..=nc {
                let dfdx = (get(ix as i64, iy as i64) - get(ix as i64 - 1, iy as i64)) / h;
                let dfdy = (get(ix as i64 - 1, iy as i64 + 1)
                    + get(ix as i64, iy as i64 + 1)
                    - get(ix as i64 - 1, iy as i64 - 1)
                    - get(ix as i64, iy as i64 - 1))
                    / (4.0 * h);
                flux_x[iy * (nc + 1) + ix] =
                    self.mu_face_x[iy * (nc + 1) + ix] * (kxx * dfdx + kxy * dfdy);
            }
        }
        let mut flux_y = vec![0.0f64; nc * (nc + 1)];
        for iy in 0..=nc {
            for ix in 0..nc {
                let dfdy = (get(ix as i64, iy as i64) - get(ix as i64, iy as i64 - 1)) / h;
                let dfdx = (get(ix as i64 + 1, iy as i64 - 1)
                    + get(ix as i64 + 1, iy as i64)
                    - get(ix as i64 - 1, iy as i64 - 1)
                    - get(ix as i64 - 1, iy as i64))
                    / (4.0 * h);
                flux_y[iy * nc + ix] = self.mu_face_y[iy * nc + ix] * (kyx * dfdx + kyy * dfdy);
            }
        }

        for iy in 0..nc {
            for ix in 0..nc {
                let idx = iy * nc + ix;
                let delta_g = flux_x[iy * (nc + 1) + ix + 1] - flux_x[iy * (nc + 1) + ix]
                    + flux_y[(iy + 1) * nc + ix]
                    - flux_y[iy * nc + ix];
                // d/dt (f mu h^2) = h * delta_G; the normalization of mu
                // cancels between the two sides.
                new_f[idx] = f[idx] + dt * delta_g / (h * self.mu_raw[idx]);
                if ix == 0 || iy == 0 || ix + 1 == nc || iy + 1 == nc {
                    boundary_leak += (dt * delta_g * h).abs();
                }
            }
        }
        if new_f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort("non-finite FP density".into()));
        }
        let _ = boundary_leak;
        state.f = new_f;
        state.time += dt;
        Ok(())
    }

    /// `int f d mu` on the grid.
    pub fn mass(&self, state: &FpState) -> f64 {
        state.f.iter().zip(&self.mu_cell).map(|(a, b)| a * b).sum()
    }

    /// Relative entropy `S = int Phi(f) d mu`, `Phi(x) = x log x`.
    pub fn entropy(&self, state: &FpState) -> f64 {
        state
            .f
            .iter()
            .zip(&self.mu_cell)
            .map(|(&f, &w)| if f > 0.0 { f * f.ln() * w } else { 0.0 })
            .sum()
    }

    /// Fisher information with the `A` weight:
    /// `I_A = int (1/f) A grad f . grad f d mu = 27 int |grad f|^2 / f d mu`.
    pub fn fisher_a(&self, state: &FpState) -> f64 {
        let nc = self.cells;
        let f = &state.f;
        let get = |ix: i64, iy: i64| -> f64 {
            if ix < 0 || iy < 0 || ix >= nc as i64 || iy >= nc as i64 {
                1.0
            } else {
                f[iy as usize * nc + ix as usize]
            }
        };
        let mut acc = 0.0;
        for iy in 0..nc {
            for ix in 0..nc {
                let idx = iy * nc + ix;
                let fx = (get(ix as i64 + 1, iy as i64) - get(ix as i64 - 1, iy as i64))
                    / (2.0 * self.h);
                let fy = (get(ix as i64, iy as i64 + 1) - get(ix as i64, iy as i64 - 1))
                    / (2.0 * self.h);
                if f[idx] > 1e-14 {
                    acc += (fx * fx + fy * fy) / f[idx] * self.mu_cell[idx];
                }
            }
        }
        A3_DIAG * acc
    }

    /// First and second moments of `f mu` in plane coordinates.
    pub fn moments(&self, state: &FpState) -> ([f64; 2], DMatrix<f64>) {
        let nc = self.cells;
        let mut m = [0.0f64; 2];
        let mut s = DMatrix::<f64>::zeros(2, 2);
        for iy in 0..nc {
            for ix in 0..nc {
                let idx = iy * nc + ix;
                let w = state.f[idx] * self.mu_cell[idx];
                let z = Self::center(self.half_extent, self.h, ix, iy);
                m[0] += w * z.0;
                m[1] += w * z.1;
            }
        }
        for iy in 0..nc {
            for ix in 0..nc {
                let idx = iy * nc + ix;
                let w = state.f[idx] * self.mu_cell[idx];
                let z = Self::center(self.half_extent, self.h, ix, iy);
                let d = [z.0 - m[0], z.1 - m[1]];
                for a in 0..2 {
                    for b in 0..2 {
                        s[(a, b)] += w * d[a] * d[b];
                    }
                }
            }
        }
        (m, s)
    }

    /// Runs the state forward, recording `(time, S, I_A)` every
    /// `record_every` steps; asserts nothing, just measures.
    pub fn entropy_series(
        &self,
        state: &mut FpState,
        dt: f64,
        steps: usize,
        record_every: usize,
    ) -> Result<Vec<(f64, f64, f64)>> {
        let mut out = Vec::new();
        out.push((state.time, self.entropy(state), self.fisher_a(state)));
        for s in 1..=steps {
            self.step(state, dt)?;
            if s % record_every == 0 {
                out.push((state.time, self.entropy(state), self.fisher_a(state)));
            }
        }
        Ok(out)
    }

    /// Projects micro-lattice (`n = 3`) Gaussian moments into the plane.
    pub fn project_moments(moments: &OuMoments) -> ([f64; 2], DMatrix<f64>) {
        let q = basis3();
        let m = q.transpose() * &moments.mean;
        let s = q.transpose() * &moments.cov * &q;
        ([m[0], m[1]], s)
    }
}
