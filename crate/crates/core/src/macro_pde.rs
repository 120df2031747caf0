//! Solvers for the macroscopic block ODE and the limiting PDE.
//!
//! The block profile follows the gradient flow
//!
//! ```text
//! d eta/dt = -Abar (I + P A^{-1} J N P^t) grad Hbar(eta),
//! ```
//!
//! integrated by an adaptive linearly-implicit scheme: a Rosenbrock-Euler
//! step with approximate Jacobian `W = -Abar diag(psi_K'')`, step-doubling
//! error control, and Richardson extrapolation (second order). The genuinely
//! coarse-grained `Abar` (dense factorization) drives the flow; its
//! discrepancy from the block Laplacian is part of what the experiments
//! measure and must not be hidden.
//!
//! The scaling limit is the drift-diffusion equation on the torus
//!
//! ```text
//! d zeta/dt = (phi'(zeta))'' + (phi'(zeta))',
//! ```
//!
//! discretized in flux form (so mass moves by telescoping face differences)
//! with the diffusion handled implicitly through a frozen-coefficient
//! circulant solve. With `phi' = id` the exact solution is mode-wise decay
//! `exp(-4 pi^2 k^2 t)` composed with leftward translation, which is the
//! reference for the convergence studies.

use rustfft::num_complex::Complex;

use crate::coarse_grain::{CoarseGrain, MacroVector};
use crate::error::{Error, Result};
use crate::metrics::{h_minus1_sq, StepFunction};
use crate::operators::CirculantSpectrum;
use crate::thermo::{macro_grad_h, macro_h, CramerTable, PsiKTable};

/// A checkpointed solution of the macroscopic ODE.
#[derive(Clone, Debug)]
pub struct MacroTrajectory {
    pub times: Vec<f64>,
    pub profiles: Vec<MacroVector>,
}

impl MacroTrajectory {
    /// Profile at a checkpoint index.
    pub fn at(&self, idx: usize) -> &MacroVector {
        &self.profiles[idx]
    }
}

/// Right-hand side of the macroscopic ODE; mean-zero, vanishing at constant
/// profiles.
pub fn macro_rhs(cg: &CoarseGrain, eta: &MacroVector, table: &PsiKTable) -> Result<MacroVector> {
    let w = macro_grad_h(eta, table)?;
    let skew = cg.apply_p_a_inv_j_npt(&w)?;
    let combined = MacroVector::new(
        w.as_slice()
            .iter()
            .zip(skew.as_slice())
            .map(|(a, b)| a + b)
            .collect(),
    );
    let mut out = cg.macro_a(&combined)?;
    for v in out.as_mut_slice() {
        *v = -*v;
    }
    Ok(out)
}

/// Dissipation monitor data: `Hbar(eta(t))` at the checkpoints together
/// with the Gronwall envelope `e^{C t}(Hbar(eta_0) + 1)`.
#[derive(Clone, Debug)]
pub struct DissipationCheck {
    pub times: Vec<f64>,
    pub h_values: Vec<f64>,
    pub envelope: Vec<f64>,
    pub holds: bool,
}

/// A posteriori check of `Hbar(eta(t)) <= e^{Ct}(Hbar(eta_0) + 1)` with
/// `C = c Lambda^2 / lambda` (min-zero normalized `Hbar`).
pub fn check_dissipation(
    traj: &MacroTrajectory,
    table: &PsiKTable,
    c: f64,
    lambda: f64,
    lambda_big: f64,
) -> Result<DissipationCheck> {
    let big_c = c * lambda_big * lambda_big / lambda;
    let h0 = macro_h(&traj.profiles[0], table)?;
    let mut h_values = Vec::with_capacity(traj.times.len());
    let mut envelope = Vec::with_capacity(traj.times.len());
    let mut holds = true;
    for (t, eta) in traj.times.iter().zip(&traj.profiles) {
        let h = macro_h(eta, table)?;
        let env = (big_c * t).exp() * (h0 + 1.0);
        holds &= h <= env * (1.0 + 1e-12);
        h_values.push(h);
        envelope.push(env);
    }
    Ok(DissipationCheck { times: traj.times.clone(), h_values, envelope, holds })
}

/// Dense restriction of a macroscopic linear operator to the mean-zero
/// subspace in the Helmert basis.
fn restricted_dense<F>(m: usize, apply: F) -> Result<nalgebra::DMatrix<f64>>
where
    F: Fn(&MacroVector) -> Result<MacroVector>,
{
    let q = crate::coarse_grain::helmert_basis(m);
    let mut out = nalgebra::DMatrix::<f64>::zeros(m - 1, m - 1);
    for j in 0..m - 1 {
        let col = MacroVector::new(q.column(j).iter().copied().collect());
        let img = apply(&col)?;
        let v = q.transpose() * nalgebra::DVector::from_column_slice(img.as_slice());
        out.set_column(j, &v);
    }
    Ok(out)
}

/// Integrates the macroscopic ODE from `eta0` to `t_end`, emitting profiles
/// at the requested checkpoint times (plus `t = 0`).
///
/// Adaptive Rosenbrock-Euler with step doubling: each attempted step factors
/// `I - h W` once (`W = -Abar diag(psi_K'')` frozen at the step start), takes
/// one full and two half steps, controls the Richardson error against
/// `rel_tol`, and advances with the extrapolated second-order value.
pub fn integrate_macro(
    cg: &CoarseGrain,
    table: &PsiKTable,
    eta0: &MacroVector,
    t_end: f64,
    checkpoints: &[f64],
    rel_tol: f64,
) -> Result<MacroTrajectory> {
    let m = cg.scheme().m();
    if eta0.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: eta0.len() });
    }
    let q = crate::coarse_grain::helmert_basis(m);
    let mean0 = eta0.mean();

    // Dense Abar on mean-zero coordinates, built once.
    let abar = restricted_dense(m, |y| cg.macro_a(y))?;

    let to_eta = |z: &nalgebra::DVector<f64>| -> MacroVector {
        let full = &q * z;
        MacroVector::new(full.iter().map(|v| v + mean0).collect())
    };
    let rhs_z = |z: &nalgebra::DVector<f64>| -> Result<nalgebra::DVector<f64>> {
        let f = macro_rhs(cg, &to_eta(z), table)?;
        Ok(q.transpose() * nalgebra::DVector::from_column_slice(f.as_slice()))
    };

    let mut z = {
        let centered: Vec<f64> = eta0.as_slice().iter().map(|v| v - mean0).collect();
        q.transpose() * nalgebra::DVector::from_column_slice(&centered)
    };

    // Checkpoint schedule.
    let mut cps: Vec<f64> = checkpoints.to_vec();
    if cps.first().is_none_or(|&t| t > 0.0) {
        cps.insert(0, 0.0);
    }
    let mut out_times = Vec::new();
    let mut out_profiles = Vec::new();

    let mut t = 0.0f64;
    let mut h = (t_end / 64.0).max(1e-12);
    let mut cp_idx = 0;
    while cp_idx < cps.len() && cps[cp_idx] <= 1e-15 {
        out_times.push(0.0);
        out_profiles.push(to_eta(&z));
        cp_idx += 1;
    }

    let id = nalgebra::DMatrix::<f64>::identity(m - 1, m - 1);
    let mut steps_taken = 0usize;
    while t < t_end - 1e-14 {
        steps_taken += 1;
        if steps_taken > 2_000_000 {
            return Err(Error::NumericalAbort("macro ODE step budget exhausted".into()));
        }
        let next_stop = if cp_idx < cps.len() { cps[cp_idx].min(t_end) } else { t_end };
        let h_try = h.min(next_stop - t).max(1e-14);

        // Frozen approximate Jacobian W = -Abar diag(psi'') at eta(t).
        let eta_now = to_eta(&z);
        let mut ddpsi = Vec::with_capacity(m);
        for &v in eta_now.as_slice() {
            ddpsi.push(table.ddpsi(v)?);
        }
        let qd = {
            // Q^t diag(ddpsi) Q
            let mut dq = q.clone();
            for i in 0..m {
                for j in 0..m - 1 {
                    dq[(i, j)] *= ddpsi[i];
                }
            }
            q.transpose() * dq
        };
        let w = -(&abar * &qd);

        let lin = (&id - &w * h_try).lu();
        let solve = |b: &nalgebra::DVector<f64>| -> Result<nalgebra::DVector<f64>> {
            lin.solve(b)
                .ok_or_else(|| Error::Factorization("singular Rosenbrock system".into()))
        };
        let lin_half = (&id - &w * (0.5 * h_try)).lu();
        let solve_half = |b: &nalgebra::DVector<f64>| -> Result<nalgebra::DVector<f64>> {
            lin_half
                .solve(b)
                .ok_or_else(|| Error::Factorization("singular Rosenbrock system".into()))
        };

        // Full step.
        let k_full = solve(&rhs_z(&z)?)?;
        let y_full = &z + &k_full * h_try;
        // Two half steps.
        let k1 = solve_half(&rhs_z(&z)?)?;
        let y_mid = &z + &k1 * (0.5 * h_try);
        let k2 = solve_half(&rhs_z(&y_mid)?)?;
        let y_two = &y_mid + &k2 * (0.5 * h_try);

        let scale = y_two.norm().max(1.0);
        let err = (&y_two - &y_full).norm() / scale;
        if err <= rel_tol {
            // Richardson extrapolation: local order 2.
            z = &y_two * 2.0 - y_full;
            t += h_try;
            while cp_idx < cps.len() && t >= cps[cp_idx] - 1e-12 {
                out_times.push(cps[cp_idx]);
                out_profiles.push(to_eta(&z));
                cp_idx += 1;
            }
        }
        // PI-free controller with safety factor.
        let grow = if err > 0.0 {
            0.9 * (rel_tol / err).sqrt()
        } else {
            4.0
        };
        h = (h_try * grow.clamp(0.2, 4.0)).min(t_end);
        if h < 1e-14 {
            return Err(Error::NumericalAbort(format!(
                "macro ODE step underflow at t = {t}: state {:?}",
                to_eta(&z).as_slice()
            )));
        }
    }
    if out_times.len() < cps.len() {
        out_times.push(t_end);
        out_profiles.push(to_eta(&z));
    }

    Ok(MacroTrajectory { times: out_times, profiles: out_profiles })
}

/// Grid solution of the limiting PDE: cell values on mesh `1/m_pde`,
/// checkpointed at requested times.
#[derive(Clone, Debug)]
pub struct PdeGridSolution {
    pub m_pde: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub profiles: Vec<Vec<f64>>,
}

impl PdeGridSolution {
    pub fn step_function(&self, idx: usize) -> StepFunction {
        StepFunction::new(self.profiles[idx].clone())
    }

    /// Discrete mass `(1/m) sum zeta_j` at a checkpoint.
    pub fn mass(&self, idx: usize) -> f64 {
        self.profiles[idx].iter().sum::<f64>() / self.m_pde as f64
    }
}

/// Flux-form right-hand side `D2 phi'(zeta) + D1 phi'(zeta)`: face fluxes
/// `F_{j+1/2} = m^2 (u_{j+1} - u_j) + (m/2)(u_j + u_{j+1})` differenced so
/// the output sums to zero exactly.
pub fn pde_rhs(zeta: &[f64], table: &CramerTable) -> Result<Vec<f64>> {
    let m = zeta.len();
    let mf = m as f64;
    let mut u = Vec::with_capacity(m);
    for &v in zeta {
        u.push(table.dphi(v)?);
    }
    let flux = |j: usize| -> f64 {
        let jp = if j + 1 == m { 0 } else { j + 1 };
        mf * mf * (u[jp] - u[j]) + 0.5 * mf * (u[j] + u[jp])
    };
    let mut fluxes = Vec::with_capacity(m);
    for j in 0..m {
        fluxes.push(flux(j));
    }
    // Telescoping face differences; the last cell closes the rounding-level
    // residue so the output sums to zero bitwise.
    let mut out = Vec::with_capacity(m);
    let mut running = 0.0f64;
    for j in 0..m - 1 {
        let jm = if j == 0 { m - 1 } else { j - 1 };
        let d = fluxes[j] - fluxes[jm];
        running += d;
        out.push(d);
    }
    out.push(-running);
    Ok(out)
}

/// Method-of-lines solver with the diffusion term treated implicitly by a
/// frozen-coefficient circulant solve. `dt` defaults to
/// `0.25 mesh^2 / max phi''`; discrete mass is pinned to the initial mass
/// after each implicit solve.
pub fn solve_pde(
    zeta0: &[f64],
    t_end: f64,
    table: &CramerTable,
    checkpoints: &[f64],
    dt_override: Option<f64>,
) -> Result<PdeGridSolution> {
    let m = zeta0.len();
    if m < 8 {
        return Err(Error::Config(format!("PDE mesh too coarse: {m} cells")));
    }
    let mf = m as f64;
    let c_bar = table.convexity_bounds().lambda_big;
    let dt = dt_override.unwrap_or(0.25 / (mf * mf * c_bar));
    let steps_total = (t_end / dt).ceil() as usize;
    let dt = if steps_total > 0 { t_end / steps_total as f64 } else { dt };

    let spectrum = CirculantSpectrum::new(m);
    // Implicit factor for mode k: 1 + dt c_bar lap_k with lap_k the
    // eigenvalue of the (mesh-scaled) discrete Laplacian.
    let lap = |k: usize| -> f64 {
        let s = (std::f64::consts::PI * k as f64 / mf).sin();
        4.0 * mf * mf * s * s
    };

    let mass0 = zeta0.iter().sum::<f64>() / mf;
    let mut zeta = zeta0.to_vec();

    let cp_steps: Vec<usize> = checkpoints
        .iter()
        .map(|&ct| ((ct / dt).round() as usize).min(steps_total))
        .collect();
    let mut times = Vec::new();
    let mut profiles = Vec::new();
    let mut cp_idx = 0;
    let mut record = |step: usize, t: f64, zeta: &[f64], cp_idx: &mut usize| {
        while *cp_idx < cp_steps.len() && cp_steps[*cp_idx] == step {
            times.push(t);
            profiles.push(zeta.to_vec());
            *cp_idx += 1;
        }
    };
    record(0, 0.0, &zeta, &mut cp_idx);

    for s in 1..=steps_total {
        // Explicit flux part minus the frozen diffusion (also in flux form).
        let rhs = pde_rhs(&zeta, table)?;
        let mut work: Vec<f64> = zeta
            .iter()
            .zip(&rhs)
            .enumerate()
            .map(|(j, (&z, &r))| {
                let jp = if j + 1 == m { 0 } else { j + 1 };
                let jm = if j == 0 { m - 1 } else { j - 1 };
                let lapl = mf * mf * (zeta[jp] - 2.0 * z + zeta[jm]);
                z + dt * (r - c_bar * lapl)
            })
            .collect();
        // Implicit diffusion via the circulant multiplier.
        work = spectrum.apply_multiplier(&work, |k| {
            Complex::new(1.0 / (1.0 + dt * c_bar * lap(k)), 0.0)
        });
        // Re-pin the conserved mass (the FFT round trip costs one ulp).
        let mass = work.iter().sum::<f64>() / mf;
        let fix = mass0 - mass;
        for v in &mut work {
            *v += fix;
        }
        if work.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort(format!("PDE blow-up at step {s}")));
        }
        zeta = work;
        record(s, s as f64 * dt, &zeta, &mut cp_idx);
    }

    Ok(PdeGridSolution { m_pde: m, dt, times, profiles })
}

/// Exact solution of the Gaussian-case PDE (`phi' = id`): mode `k` evolves
/// by `exp((-4 pi^2 k^2 + 2 pi i k) t)`, i.e. heat decay plus leftward
/// translation.
pub fn gaussian_exact_pde(zeta0: &[f64], t: f64) -> Vec<f64> {
    let m = zeta0.len();
    let spectrum = CirculantSpectrum::new(m);
    spectrum.apply_multiplier(zeta0, |k| {
        // Signed frequency of DFT bin k.
        let freq = if 2 * k <= m { k as f64 } else { k as f64 - m as f64 };
        let tp = 2.0 * std::f64::consts::PI * freq;
        (Complex::new(-tp * tp, tp) * t).exp()
    })
}

/// Contraction monitor for pairs of PDE solutions:
/// `F(t) = (1/2) || zeta1 - zeta2 ||^2_{H^{-1}}` against the Gronwall
/// envelope `F(0) e^{C t}` with `C = (sup phi'')^2 / inf phi''`.
#[derive(Clone, Debug)]
pub struct ContractionMonitor {
    pub times: Vec<f64>,
    pub gap: Vec<f64>,
    pub envelope: Vec<f64>,
    pub holds: bool,
}

pub fn pde_uniqueness_contraction(
    sol1: &PdeGridSolution,
    sol2: &PdeGridSolution,
    table: &CramerTable,
) -> Result<ContractionMonitor> {
    if sol1.m_pde != sol2.m_pde || sol1.times.len() != sol2.times.len() {
        return Err(Error::DimensionMismatch { expected: sol1.m_pde, got: sol2.m_pde });
    }
    let b = table.convexity_bounds();
    let c = b.lambda_big * b.lambda_big / b.lambda;
    let mut gap = Vec::with_capacity(sol1.times.len());
    for idx in 0..sol1.times.len() {
        let diff = sol1.step_function(idx).sub(&sol2.step_function(idx))?;
        gap.push(0.5 * h_minus1_sq(&diff)?);
    }
    let f0 = gap[0];
    let envelope: Vec<f64> = sol1.times.iter().map(|&t| f0 * (c * t).exp()).collect();
    let holds = gap
        .iter()
        .zip(&envelope)
        .all(|(g, e)| *g <= *e * (1.0 + 1e-9) + 1e-30);
    Ok(ContractionMonitor { times: sol1.times.clone(), gap, envelope, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse_grain::BlockScheme;
    use crate::thermo::{GridSpec, Potential, PsiKTable};
    use approx::assert_relative_eq;

    fn gaussian_table(k: usize) -> PsiKTable {
        PsiKTable::build(&Potential::gaussian(), k, GridSpec::default()).unwrap()
    }

    fn cramer_gaussian() -> CramerTable {
        CramerTable::build(&Potential::gaussian(), GridSpec::default()).unwrap()
    }

    #[test]
    fn macro_rhs_constant_profile_is_stationary() {
        let cg = CoarseGrain::new(BlockScheme::new(16, 4).unwrap()).unwrap();
        let table = gaussian_table(4);
        let eta = MacroVector::new(vec![0.4; 4]);
        let rhs = macro_rhs(&cg, &eta, &table).unwrap();
        assert!(rhs.as_slice().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn macro_rhs_is_tangent() {
        let cg = CoarseGrain::new(BlockScheme::new(24, 8).unwrap()).unwrap();
        let table = gaussian_table(3);
        let eta = MacroVector::new(vec![0.4, -0.2, 0.1, 0.3, -0.5, 0.0, -0.1, 0.0]);
        let rhs = macro_rhs(&cg, &eta, &table).unwrap();
        assert!(rhs.as_slice().iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn integrate_macro_constant_stays() {
        let cg = CoarseGrain::new(BlockScheme::new(16, 4).unwrap()).unwrap();
        let table = gaussian_table(4);
        let eta0 = MacroVector::new(vec![0.3; 4]);
        let traj = integrate_macro(&cg, &table, &eta0, 0.05, &[0.025, 0.05], 1e-8).unwrap();
        for p in &traj.profiles {
            for v in p.as_slice() {
                assert_relative_eq!(*v, 0.3, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn integrate_macro_conserves_mean_and_dissipates() {
        let cg = CoarseGrain::new(BlockScheme::new(32, 8).unwrap()).unwrap();
        let table = gaussian_table(4);
        let eta0 = MacroVector::new(
            (0..8)
                .map(|j| 0.5 * (2.0 * std::f64::consts::PI * j as f64 / 8.0).cos())
                .collect(),
        );
        let traj =
            integrate_macro(&cg, &table, &eta0, 0.02, &[0.005, 0.01, 0.02], 1e-8).unwrap();
        for p in &traj.profiles {
            assert!((p.mean() - eta0.mean()).abs() < 1e-10);
        }
        let check = check_dissipation(&traj, &table, 1.0, 1.0, 1.0).unwrap();
        assert!(check.holds);
        // Gradient flow: Hbar strictly decreasing on this data.
        assert!(check.h_values.last().unwrap() < &check.h_values[0]);
    }

    #[test]
    fn integrate_macro_tolerance_controls_endpoint() {
        let cg = CoarseGrain::new(BlockScheme::new(32, 8).unwrap()).unwrap();
        let pot = Potential::new(0.1, 1.0).unwrap();
        let table = PsiKTable::build(&pot, 4, GridSpec::default()).unwrap();
        let eta0 = MacroVector::new(
            (0..8)
                .map(|j| 0.4 * (2.0 * std::f64::consts::PI * j as f64 / 8.0).cos())
                .collect(),
        );
        let coarse = integrate_macro(&cg, &table, &eta0, 0.01, &[0.01], 1e-6).unwrap();
        let fine = integrate_macro(&cg, &table, &eta0, 0.01, &[0.01], 5e-7).unwrap();
        let a = coarse.profiles.last().unwrap();
        let b = fine.profiles.last().unwrap();
        let diff: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 10.0 * 1e-6, "endpoint moved by {diff}");
    }

    #[test]
    fn macro_fisher_time_integral_is_bounded() {
        // Integrated dissipation along the gradient flow:
        // int <Abar grad Hbar, grad Hbar>_Y dt <= 2(Hbar_0 - Hbar_T)
        //   + C T (1 + e^{CT} Hbar_0), with C = c Lambda^2 / lambda.
        use crate::coarse_grain::y_inner;
        use crate::thermo::{macro_grad_h, macro_h};

        let cg = CoarseGrain::new(BlockScheme::new(64, 16).unwrap()).unwrap();
        let pot = Potential::new(0.1, 1.0).unwrap();
        let table = PsiKTable::build(&pot, 4, GridSpec::default()).unwrap();
        let eta0 = MacroVector::new(
            (0..16)
                .map(|j| 0.5 * (2.0 * std::f64::consts::PI * j as f64 / 16.0).cos())
                .collect(),
        );
        let t_end = 0.02;
        let cps: Vec<f64> = (0..9).map(|i| t_end * i as f64 / 8.0).collect();
        let traj = integrate_macro(&cg, &table, &eta0, t_end, &cps, 1e-8).unwrap();

        let fisher_at = |eta: &MacroVector| -> f64 {
            let w = macro_grad_h(eta, &table).unwrap();
            let aw = cg.macro_a(&w).unwrap();
            y_inner(&aw, &w)
        };
        let series: Vec<f64> = traj.profiles.iter().map(fisher_at).collect();
        let integral = crate::metrics::trapezoid(&traj.times, &series);

        let b = table.convexity_bounds();
        let big_c = b.lambda_big * b.lambda_big / b.lambda;
        let h0 = macro_h(&eta0, &table).unwrap();
        let h_t = macro_h(traj.profiles.last().unwrap(), &table).unwrap();
        let bound = 2.0 * (h0 - h_t) + big_c * t_end * (1.0 + (big_c * t_end).exp() * h0);
        assert!(integral >= 0.0);
        assert!(
            integral <= bound,
            "integrated macro Fisher {integral} exceeds bound {bound}"
        );
    }

    #[test]
    fn pde_rhs_constant_is_zero_and_sums_to_zero() {
        let table = cramer_gaussian();
        let rhs = pde_rhs(&vec![0.3; 32], &table).unwrap();
        assert!(rhs.iter().all(|v| v.abs() < 1e-10));

        let m = 64;
        let zeta: Vec<f64> = (0..m)
            .map(|j| 0.4 * (2.0 * std::f64::consts::PI * j as f64 / m as f64).cos())
            .collect();
        let rhs = pde_rhs(&zeta, &table).unwrap();
        assert_eq!(rhs.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn pde_rhs_matches_taylor_expansion() {
        // zeta = cos(2 pi theta), phi' = id: rhs -> -4 pi^2 cos - 2 pi sin
        // with O(mesh^2) error.
        let table = cramer_gaussian();
        let tp = 2.0 * std::f64::consts::PI;
        let mut prev = f64::INFINITY;
        for m in [32usize, 64, 128] {
            let zeta: Vec<f64> = (0..m).map(|j| (tp * j as f64 / m as f64).cos()).collect();
            let rhs = pde_rhs(&zeta, &table).unwrap();
            let mut err = 0.0f64;
            for (j, r) in rhs.iter().enumerate() {
                let th = j as f64 / m as f64;
                let exact = -tp * tp * (tp * th).cos() - tp * (tp * th).sin();
                err = err.max((r - exact).abs());
            }
            assert!(err < prev / 3.0, "m = {m}: err = {err} (prev {prev})");
            prev = err;
        }
    }

    #[test]
    fn gaussian_exact_pde_basics() {
        let m = 64;
        let tp = 2.0 * std::f64::consts::PI;
        let zeta0: Vec<f64> = (0..m).map(|j| (tp * j as f64 / m as f64).cos()).collect();
        // t = 0 is the identity.
        let same = gaussian_exact_pde(&zeta0, 0.0);
        for (a, b) in same.iter().zip(&zeta0) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        // Amplitude e^{-4 pi^2 t}, phase shift t for the k = 1 mode.
        let t = 0.05;
        let out = gaussian_exact_pde(&zeta0, t);
        let amp = (-tp * tp * t).exp();
        assert_relative_eq!(amp, 0.13891, epsilon = 1e-5);
        for (j, v) in out.iter().enumerate() {
            let th = j as f64 / m as f64;
            assert_relative_eq!(*v, amp * (tp * (th + t)).cos(), epsilon = 1e-12);
        }
        // Mean mode unchanged.
        let shifted: Vec<f64> = zeta0.iter().map(|v| v + 0.7).collect();
        let out = gaussian_exact_pde(&shifted, 0.3);
        assert_relative_eq!(out.iter().sum::<f64>() / m as f64, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn solve_pde_constant_stays_and_mass_is_pinned() {
        let table = cramer_gaussian();
        let sol = solve_pde(&vec![0.25; 32], 0.01, &table, &[0.01], None).unwrap();
        for v in sol.profiles.last().unwrap() {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-12);
        }
        assert_relative_eq!(sol.mass(0), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn solve_pde_matches_gaussian_exact_solution() {
        let table = cramer_gaussian();
        let tp = 2.0 * std::f64::consts::PI;
        let t_end = 0.02;
        let mut errors = Vec::new();
        for m in [32usize, 64, 128] {
            let zeta0: Vec<f64> = (0..m).map(|j| (tp * j as f64 / m as f64).cos()).collect();
            let sol = solve_pde(&zeta0, t_end, &table, &[t_end], None).unwrap();
            let exact = gaussian_exact_pde(&zeta0, t_end);
            let got = sol.profiles.last().unwrap();
            let err = (got
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / m as f64)
                .sqrt();
            errors.push(err);
            // Mass conserved to near machine precision.
            assert!((sol.mass(sol.times.len() - 1) - sol.mass(0)).abs() < 1e-13);
        }
        // Order >= 1.9 between successive meshes.
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order} from errors {errors:?}");
        }
    }

    #[test]
    fn contraction_monitor_zero_for_identical() {
        let table = cramer_gaussian();
        let zeta0: Vec<f64> = (0..32)
            .map(|j| 0.3 * (2.0 * std::f64::consts::PI * j as f64 / 32.0).cos())
            .collect();
        let sol = solve_pde(&zeta0, 0.01, &table, &[0.0, 0.005, 0.01], None).unwrap();
        let mon = pde_uniqueness_contraction(&sol, &sol, &table).unwrap();
        assert!(mon.holds);
        assert!(mon.gap.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn contraction_bound_holds_for_gaussian_modes() {
        // Two exact single-mode solutions: F(t) decays, trivially below the
        // growing envelope, and also below the sharper sup''/inf'' one.
        let table = cramer_gaussian();
        let tp = 2.0 * std::f64::consts::PI;
        let m = 64;
        let z1: Vec<f64> = (0..m).map(|j| (tp * j as f64 / m as f64).cos()).collect();
        let z2: Vec<f64> = (0..m).map(|j| 0.5 * (tp * j as f64 / m as f64).sin()).collect();
        let cps = [0.0, 0.005, 0.01, 0.02];
        let s1 = solve_pde(&z1, 0.02, &table, &cps, None).unwrap();
        let s2 = solve_pde(&z2, 0.02, &table, &cps, None).unwrap();
        let mon = pde_uniqueness_contraction(&s1, &s2, &table).unwrap();
        assert!(mon.holds);
        for w in mon.gap.windows(2) {
            assert!(w[1] <= w[0], "gap not contracting: {:?}", mon.gap);
        }
    }

    #[test]
    fn contraction_bound_holds_for_anharmonic_pair() {
        let pot = Potential::new(0.1, 1.0).unwrap();
        let table = CramerTable::build(&pot, GridSpec::default()).unwrap();
        let tp = 2.0 * std::f64::consts::PI;
        let m = 64;
        let z1: Vec<f64> = (0..m).map(|j| 0.5 * (tp * j as f64 / m as f64).cos()).collect();
        let z2: Vec<f64> = z1.iter().map(|v| v + 0.02 * (2.0 * v).sin()).collect();
        let cps = [0.0, 0.004, 0.008, 0.012];
        let s1 = solve_pde(&z1, 0.012, &table, &cps, None).unwrap();
        let s2 = solve_pde(&z2, 0.012, &table, &cps, None).unwrap();
        let mon = pde_uniqueness_contraction(&s1, &s2, &table).unwrap();
        assert!(mon.holds, "gap {:?} envelope {:?}", mon.gap, mon.envelope);
    }
}
