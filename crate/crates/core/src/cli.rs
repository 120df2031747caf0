//! Experiment orchestration: assumption verification, single runs,
//! convergence sweeps over `(N, M)` schedules, oracle suites, and
//! reproducible result emission.
//!
//! Every run resolves its configuration (TOML file plus flag overrides)
//! into an echoable struct, hashes it, and stamps the hash into every
//! output file. Statistics reductions are fixed-order, so identical
//! `(config, seed, build)` triples produce bit-identical CSV and JSON.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse_grain::{BlockScheme, CoarseGrain, MacroVector};
use crate::error::{Error, Result};
use crate::fp_oracle::{ou_propagate, ou_theta_exact, FpOracle, OuMoments};
use crate::macro_pde::{
    check_dissipation, gaussian_exact_pde, integrate_macro, solve_pde, MacroTrajectory,
};
use crate::metrics::{
    hydro_gap, macro_l2_gap, convergence_bound_check, theta_estimate, trapezoid, BoundCheckReport,
    StepFunction, BoundConstants,
};
use crate::micro_sim::{run_ensemble, InitialData, Integrator, SimConfig};
use crate::operators::{check_assumptions, AssumptionCheckConfig, LatticeDim, LatticeOps, MicroVector};
use crate::thermo::{CramerTable, GridSpec, Potential, PsiKTable};

/// Experiment modes exposed as CLI subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Verify,
    Simulate,
    Macro,
    Pde,
    Sweep,
    Oracle,
}

/// How the microscopic ensemble is initialized around the macroscopic
/// profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Lift,
    LocalGibbs,
    ConditionalMu,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Perturbation amplitude `a` in `psi = x^2/2 + a cos(b x)`.
    pub a: f64,
    pub b: f64,
    /// Conserved mean spin.
    pub mean: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { a: 0.0, b: 1.0, mean: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub m_max: f64,
    pub subdiv: u32,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { m_max: 2.5, subdiv: 64 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    /// Time step; 0 selects the automatic rule.
    pub dt: f64,
    pub t_end: f64,
    pub ensemble: usize,
    pub integrator: String,
    /// Number of uniformly spaced checkpoints (including t_end).
    pub checkpoints: usize,
    pub initial: InitialKind,
    /// Initial profile `amplitude * cos(2 pi theta)`.
    pub amplitude: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt: 0.0,
            t_end: 0.1,
            ensemble: 200,
            integrator: "semi-implicit".into(),
            checkpoints: 6,
            initial: InitialKind::ConditionalMu,
            amplitude: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeSection {
    pub mesh: usize,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection { mesh: 256 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    pub cells: usize,
    pub half_extent: f64,
    /// OU cross-check lattice size and ensemble.
    pub n: usize,
    pub ensemble: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { cells: 768, half_extent: 6.0, n: 64, ensemble: 400 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsSection {
    /// Assumed log-Sobolev constant of the conditional measures.
    pub rho: f64,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        ConstantsSection { rho: 1.0 }
    }
}

/// Full experiment configuration (TOML sections plus flag overrides).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub model: ModelSection,
    pub grid: GridSection,
    /// `(N, M)` pairs; a single pair for simulate/macro, a schedule for
    /// sweep.
    pub schedule: Vec<(usize, usize)>,
    pub sim: SimSection,
    pub pde: PdeSection,
    pub oracle: OracleSection,
    pub constants: ConstantsSection,
    pub seed: u64,
    pub out_dir: String,
    /// Directory for cached psi_K tables; empty disables caching.
    pub table_cache: String,
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Verify,
            model: ModelSection::default(),
            grid: GridSection::default(),
            schedule: vec![(128, 16), (256, 16), (512, 32)],
            sim: SimSection::default(),
            pde: PdeSection::default(),
            oracle: OracleSection::default(),
            constants: ConstantsSection::default(),
            seed: 7,
            out_dir: "out".into(),
            table_cache: String::new(),
            threads: 0,
            deterministic: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn potential(&self) -> Result<Potential> {
        Potential::new(self.model.a, self.model.b)
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec { m_max: self.grid.m_max, subdiv: self.grid.subdiv }
    }

    pub fn integrator(&self) -> Result<Integrator> {
        match self.sim.integrator.as_str() {
            "explicit" => Ok(Integrator::Explicit),
            "semi-implicit" => Ok(Integrator::SemiImplicit),
            other => Err(Error::Config(format!("unknown integrator '{other}'"))),
        }
    }

    /// Schedule sanity: `M | N`, `N` strictly increasing, `N/M`
    /// nondecreasing (the hydrodynamic regime).
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Config("empty (N, M) schedule".into()));
        }
        let mut prev_n = 0usize;
        let mut prev_ratio = 0f64;
        for &(n, m) in &self.schedule {
            if m < 3 || n % m != 0 {
                return Err(Error::Config(format!(
                    "schedule pair N = {n}, M = {m} must satisfy M | N, M >= 3"
                )));
            }
            if n <= prev_n && self.schedule.len() > 1 {
                return Err(Error::Config("schedule must be strictly increasing in N".into()));
            }
            let ratio = n as f64 / m as f64;
            if ratio + 1e-12 < prev_ratio {
                return Err(Error::Config(
                    "schedule must have nondecreasing N/M (hydrodynamic regime)".into(),
                ));
            }
            prev_n = n;
            prev_ratio = ratio;
        }
        let _ = self.potential()?;
        let _ = self.integrator()?;
        if self.sim.checkpoints < 2 {
            return Err(Error::Config("need at least 2 checkpoints".into()));
        }
        Ok(())
    }

    /// Content hash stamped into every output.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_prefix(&h.finalize(), 16)
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s.truncate(chars);
    s
}

/// Content hash of a serializable table, for provenance tracking.
pub fn table_hash<T: Serialize>(t: &T) -> String {
    let json = serde_json::to_string(t).expect("table serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    hex_prefix(&h.finalize(), 16)
}

/// Loads a `psi_K` table from the cache directory keyed by
/// `(a, b, k, m_max, subdiv)`, building and saving it on a miss. A cache
/// entry with a mismatched key or version is rebuilt.
pub fn psi_k_cached(
    cache_dir: &Path,
    potential: &Potential,
    k: usize,
    grid: GridSpec,
) -> Result<PsiKTable> {
    let key = format!(
        "psi_k_a{:e}_b{:e}_k{}_m{:e}_s{}.json",
        potential.a(),
        potential.b(),
        k,
        grid.m_max,
        grid.subdiv
    );
    let path = cache_dir.join(key);
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(table) = serde_json::from_str::<PsiKTable>(&text) {
            if table.version == 1
                && table.k == k
                && table.grid == grid
                && table.potential == *potential
            {
                return Ok(table);
            }
        }
    }
    let table = PsiKTable::build(potential, k, grid)?;
    std::fs::create_dir_all(cache_dir)?;
    std::fs::write(&path, serde_json::to_string(&table).expect("table serializes"))?;
    Ok(table)
}

/// Automatic time-step rule: the trapezoidal linear solve is unconditionally
/// stable, so the step is set by the explicitly treated bounded residual
/// (`8 n^2 |a| b^2` Lipschitz scale) and by checkpoint resolution.
pub fn auto_dt(n: usize, potential: &Potential, t_end: f64) -> f64 {
    let nf = n as f64;
    let base = (0.25 / nf).min(t_end / 100.0);
    let (_, _, c2) = potential.perturbation_norms();
    if c2 > 0.0 {
        base.min(1.0 / (4.0 * nf * nf * c2))
    } else {
        base
    }
}

/// Per-checkpoint estimator values of a single `(N, M)` run.
#[derive(Clone, Debug, Serialize)]
pub struct CheckpointMetrics {
    pub time: f64,
    pub theta: f64,
    pub theta_stderr: f64,
    pub macro_gap: f64,
    pub macro_gap_stderr: f64,
    pub hydro_gap: f64,
    pub hydro_gap_stderr: f64,
    pub alpha_hat: f64,
    pub max_mean_drift: f64,
}

/// Everything a single `(N, M)` experiment produces.
#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub checkpoints: Vec<CheckpointMetrics>,
    pub constants: BoundConstants,
    pub bound: BoundCheckReport,
    pub dissipation_holds: bool,
    pub sup_hydro_gap: f64,
    pub sup_hydro_gap_stderr: f64,
    pub sup_theta: f64,
    pub table_sha: String,
    pub wall_secs: f64,
}

/// Runs the full two-scale pipeline for one `(N, M)` point: tables,
/// ensemble, macroscopic ODE, PDE reference, estimator series, and the
/// convergence-bound verdict.
pub fn execute_run(config: &ExperimentConfig, n: usize, m: usize) -> Result<RunResult> {
    let start = Instant::now();
    let potential = config.potential()?;
    let scheme = BlockScheme::new(n, m)?;
    let cg = CoarseGrain::new(scheme)?;
    let ops = LatticeOps::new(LatticeDim::new(n)?);
    let grid = config.grid_spec();
    let psi_k = if config.table_cache.is_empty() {
        PsiKTable::build(&potential, scheme.k(), grid)?
    } else {
        psi_k_cached(Path::new(&config.table_cache), &potential, scheme.k(), grid)?
    };
    let cramer = CramerTable::build(&potential, grid)?;

    // Initial macroscopic data: block averages of the cosine profile.
    let amp = config.sim.amplitude;
    let mean = config.model.mean;
    let profile = move |t: f64| mean + amp * (2.0 * std::f64::consts::PI * t).cos();
    let eta0 = MacroVector::new(StepFunction::from_fn_cell_avg(profile, m).as_slice().to_vec());

    let t_end = config.sim.t_end;
    let dt = if config.sim.dt > 0.0 { config.sim.dt } else { auto_dt(n, &potential, t_end) };
    let n_cp = config.sim.checkpoints;
    let checkpoints: Vec<f64> = (0..n_cp).map(|i| t_end * i as f64 / (n_cp - 1) as f64).collect();

    let sim_config = SimConfig {
        scheme,
        potential,
        dt,
        t_end,
        ensemble_size: config.sim.ensemble,
        seed: config.seed,
        integrator: config.integrator()?,
        checkpoints: checkpoints.clone(),
    };
    let initial = match config.sim.initial {
        InitialKind::Lift => InitialData::DeterministicLift(eta0.clone()),
        InitialKind::LocalGibbs => InitialData::LocalGibbs(eta0.clone()),
        InitialKind::ConditionalMu => InitialData::ConditionalMu(eta0.clone()),
    };
    let ensemble = run_ensemble(&sim_config, Some(&psi_k), &initial)?;

    // Macroscopic ODE along the same checkpoints.
    let traj = integrate_macro(&cg, &psi_k, &eta0, t_end, &checkpoints, 1e-8)?;

    // PDE reference: closed form in the Gaussian case, method of lines
    // otherwise.
    let zeta0 = StepFunction::from_fn_cell_avg(profile, config.pde.mesh);
    let pde_profiles: Vec<Vec<f64>> = if potential.is_gaussian() {
        checkpoints
            .iter()
            .map(|&t| gaussian_exact_pde(zeta0.as_slice(), t))
            .collect()
    } else {
        let sol = solve_pde(zeta0.as_slice(), t_end, &cramer, &checkpoints, None)?;
        sol.profiles
    };

    // Estimator series.
    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut theta_series = Vec::new();
    let mut gap_series = Vec::new();
    for (ci, cp) in ensemble.checkpoints.iter().enumerate() {
        let eta_t = traj.at(ci);
        let (theta, theta_err) = theta_estimate(&ops, &cg, &cp.states, eta_t)?;
        let (mgap, mgap_err) = macro_l2_gap(&cg, &cp.states, eta_t)?;
        let zeta_t = StepFunction::new(pde_profiles[ci].clone());
        let (hgap, hgap_err) = hydro_gap(&cp.states, &zeta_t)?;
        theta_series.push((cp.time, theta, theta_err));
        gap_series.push((cp.time, mgap, mgap_err));
        rows.push(CheckpointMetrics {
            time: cp.time,
            theta,
            theta_stderr: theta_err,
            macro_gap: mgap,
            macro_gap_stderr: mgap_err,
            hydro_gap: hgap,
            hydro_gap_stderr: hgap_err,
            alpha_hat: cp.alpha_hat,
            max_mean_drift: cp.max_mean_drift,
        });
    }

    // Constants: measured where measurable, assumed rho, c = 1 verified by
    // the operator checks.
    let bounds = psi_k.convexity_bounds();
    if !bounds.is_uniformly_convex() {
        return Err(Error::NumericalAbort(format!(
            "psi_K not uniformly convex for k = {} (lambda = {})",
            scheme.k(),
            bounds.lambda
        )));
    }
    let gamma = if n <= 512 {
        cg.measure_gamma_exact()?
    } else {
        cg.measure_gamma_sampled(256, config.seed ^ 0xabcd)?
    };
    let (_, _, kappa) = potential.perturbation_norms();
    let alpha = rows.iter().map(|r| r.alpha_hat).fold(0.0f64, f64::max);
    let c2 = crate::thermo::macro_h(&eta0, &psi_k)?;
    let constants = BoundConstants {
        c: 1.0,
        lambda: bounds.lambda,
        lambda_big: bounds.lambda_big,
        tau: ops.spectral_gap(),
        gamma,
        kappa,
        rho: config.constants.rho,
        rho_assumed: true,
        alpha,
        c1: 0.5 * crate::coarse_grain::y_norm_sq(&eta0) + 0.5,
        c2,
        t_horizon: t_end,
        m,
        n,
    };
    let bound = convergence_bound_check(&theta_series, &gap_series, &constants)?;
    let dissipation = check_dissipation(&traj, &psi_k, 1.0, bounds.lambda, bounds.lambda_big)?;

    let sup_hydro_gap = rows.iter().map(|r| r.hydro_gap).fold(f64::NEG_INFINITY, f64::max);
    let sup_hydro_gap_stderr = rows.iter().map(|r| r.hydro_gap_stderr).fold(0.0f64, f64::max);
    let sup_theta = rows.iter().map(|r| r.theta).fold(f64::NEG_INFINITY, f64::max);

    Ok(RunResult {
        n,
        m,
        k: scheme.k(),
        checkpoints: rows,
        constants,
        bound,
        dissipation_holds: dissipation.holds,
        sup_hydro_gap,
        sup_hydro_gap_stderr,
        sup_theta,
        table_sha: table_hash(&psi_k),
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// One identity check with its measured residual and tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

/// Verification report for one `(N, M)` point.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub n: usize,
    pub m: usize,
    pub checks: Vec<IdentityCheck>,
    pub spectral_gap: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lambda_big: f64,
    pub c_max_ratio: f64,
    pub all_pass: bool,
}

/// Runs the hard operator/coarse-graining identities and the measured
/// constants for one scheme.
pub fn verify_scheme(config: &ExperimentConfig, n: usize, m: usize) -> Result<VerifyReport> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let scheme = BlockScheme::new(n, m)?;
    let cg = CoarseGrain::new(scheme)?;
    let ops = LatticeOps::new(LatticeDim::new(n)?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7e57);
    let mut checks = Vec::new();

    // Operator assumptions (dense residuals for moderate n, batch for the
    // c = 1 ratio).
    let rep = check_assumptions(&ops, &AssumptionCheckConfig { batch: 512, seed: config.seed })?;
    checks.push(IdentityCheck::new("J antisymmetric (exact)", rep.antisymmetry_residual, 0.0));
    checks.push(IdentityCheck::new(
        "A and J commute",
        rep.commutation_residual,
        rep.commutation_tol,
    ));
    checks.push(IdentityCheck::new(
        "-J^2 <= A (c = 1)",
        (rep.j2_over_a_max_ratio - 1.0).max(0.0),
        1e-12,
    ));

    let random_micro = |rng: &mut ChaCha8Rng| {
        MicroVector::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let random_micro_mz = |rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        for x in &mut v {
            *x -= mean;
        }
        MicroVector::new(v)
    };

    // A = D D^t.
    let mut ddt_resid = 0.0f64;
    for _ in 0..16 {
        let x = random_micro(&mut rng);
        let ddt = ops.apply_d(&ops.apply_dt(&x)?)?;
        let ax = ops.apply_a(&x)?;
        let scale = ax.norm().max(1e-300);
        let mut diff = 0.0;
        for i in 0..n {
            diff += (ddt.as_slice()[i] - ax.as_slice()[i]).powi(2);
        }
        ddt_resid = ddt_resid.max(diff.sqrt() / scale);
    }
    checks.push(IdentityCheck::new("A = D D^t", ddt_resid, 1e-12));

    // N P P^t = id (bitwise round trip).
    let mut lift_resid = 0.0f64;
    for _ in 0..16 {
        let y = MacroVector::new((0..m).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let back = cg.project_p(&cg.lift_npt(&y)?)?;
        for (a, b) in back.as_slice().iter().zip(y.as_slice()) {
            if a != b {
                lift_resid = lift_resid.max((a - b).abs());
            }
        }
    }
    checks.push(IdentityCheck::new("N P P^t = id (bitwise)", lift_resid, 0.0));

    // Solver round trip.
    let mut solve_resid = 0.0f64;
    for _ in 0..8 {
        let x = random_micro_mz(&mut rng);
        let y = ops.solve_a_inv(&x)?;
        let ax = ops.apply_a(&y)?;
        let mut diff = 0.0;
        for i in 0..n {
            diff += (ax.as_slice()[i] - x.as_slice()[i]).powi(2);
        }
        solve_resid = solve_resid.max(diff.sqrt() / x.norm());
    }
    checks.push(IdentityCheck::new("A A^{-1} = id on mean-zero", solve_resid, 1e-10));

    // J A^{-1} closed form vs spectral composition.
    let mut ja_resid = 0.0f64;
    for _ in 0..8 {
        let x = random_micro_mz(&mut rng);
        let closed = ops.apply_j_a_inv(&x)?;
        let composed = ops.apply_j(&ops.solve_a_inv(&x)?)?;
        let scale = composed.norm().max(1e-300);
        let mut diff = 0.0;
        for i in 0..n {
            diff += (closed.as_slice()[i] - composed.as_slice()[i]).powi(2);
        }
        ja_resid = ja_resid.max(diff.sqrt() / scale);
    }
    checks.push(IdentityCheck::new("J A^{-1} cumulative-sum form", ja_resid, 1e-10));

    // P A^{-1} J N P^t closed form vs composition through the lift.
    let mut cumsum_resid = 0.0f64;
    for _ in 0..8 {
        let mut y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = y.iter().sum::<f64>() / m as f64;
        for v in &mut y {
            *v -= mean;
        }
        let xi = MacroVector::new(y);
        let closed = cg.apply_p_a_inv_j_npt(&xi)?;
        let lifted = cg.lift_npt(&xi)?;
        let composed = cg.project_p(&ops.solve_a_inv(&ops.apply_j(&lifted)?)?)?;
        let scale = composed
            .as_slice()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(1e-300);
        let mut diff = 0.0;
        for i in 0..m {
            diff += (closed.as_slice()[i] - composed.as_slice()[i]).powi(2);
        }
        cumsum_resid = cumsum_resid.max(diff.sqrt() / scale);
    }
    checks.push(IdentityCheck::new("P A^{-1} J N P^t cumulative-sum form", cumsum_resid, 1e-10));

    // Fluctuation projector: zero block sums and Pythagoras.
    let mut fluct_resid = 0.0f64;
    for _ in 0..8 {
        let x = random_micro(&mut rng);
        let f = cg.fluctuation(&x)?;
        for chunk in f.as_slice().chunks_exact(scheme.k()) {
            fluct_resid = fluct_resid.max(chunk.iter().sum::<f64>().abs());
        }
        let lifted = cg.lift_npt(&cg.project_p(&x)?)?;
        let pyth = (x.dot(&x) - lifted.dot(&lifted) - f.dot(&f)).abs() / x.dot(&x);
        fluct_resid = fluct_resid.max(pyth);
    }
    checks.push(IdentityCheck::new("fluctuation projector orthogonality", fluct_resid, 1e-12));

    // Abar round trip.
    let mut abar_resid = 0.0f64;
    for _ in 0..8 {
        let mut y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = y.iter().sum::<f64>() / m as f64;
        for v in &mut y {
            *v -= mean;
        }
        let y = MacroVector::new(y);
        let z = cg.macro_a(&cg.macro_a_inv(&y)?)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in z.as_slice().iter().zip(y.as_slice()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        abar_resid = abar_resid.max((num / den).sqrt());
    }
    checks.push(IdentityCheck::new("Abar Abar^{-1} = id", abar_resid, 1e-10));

    // Thermodynamic layer: uniform convexity and Legendre duality.
    let potential = config.potential()?;
    let grid = config.grid_spec();
    let psi_k = PsiKTable::build(&potential, scheme.k(), grid)?;
    let bounds = psi_k.convexity_bounds();
    checks.push(IdentityCheck::new(
        "psi_K uniformly convex (lambda > 0)",
        (-bounds.lambda).max(0.0),
        0.0,
    ));
    let mut duality_resid = 0.0f64;
    for m_val in [-1.0, 0.0, 0.5, 1.5] {
        let p = crate::thermo::cramer(&potential, m_val)?;
        let back = crate::thermo::tilted_mean(&potential, p.dphi)?;
        duality_resid = duality_resid.max((back - m_val).abs());
    }
    checks.push(IdentityCheck::new("Legendre duality residual", duality_resid, 1e-8));

    // Norm sandwich: penalized quadratic form vs H^{-1} norm on the sampled
    // cosine (reported; soft tolerance C/N with C = 2).
    let vals: Vec<f64> = (0..n)
        .map(|j| (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos())
        .collect();
    let meanv = vals.iter().sum::<f64>() / n as f64;
    let x = MicroVector::new(vals.iter().map(|v| v - meanv).collect());
    let quad = ops.quad_form_a_inv(&x)?;
    let h = crate::metrics::h_minus1_sq(&StepFunction::from_micro(&x))?;
    checks.push(IdentityCheck::new(
        "norm equivalence |quad - H^{-1}|",
        (quad - h).abs(),
        2.0 / n as f64,
    ));

    let gamma = if n <= 256 {
        cg.measure_gamma_exact()?
    } else {
        cg.measure_gamma_sampled(256, config.seed ^ 0xabcd)?
    };

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        n,
        m,
        checks,
        spectral_gap: ops.spectral_gap(),
        gamma,
        lambda: bounds.lambda,
        lambda_big: bounds.lambda_big,
        c_max_ratio: rep.j2_over_a_max_ratio,
        all_pass,
    })
}

/// Result of the `oracle` mode: Fokker-Planck and OU cross-validation.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub stationarity_residual: f64,
    pub entropy_identity_residual: f64,
    pub entropy_monotone: bool,
    pub fisher_j_independent_residual: f64,
    pub ou_theta_max_sigma_distance: f64,
    pub ou_stationary_max_sigma_distance: f64,
    /// `(time, entropy, Fisher information)` of the reference relaxation.
    pub entropy_series: Vec<(f64, f64, f64)>,
    pub checks: Vec<IdentityCheck>,
    pub all_pass: bool,
}

/// Runs the `N = 3` Fokker-Planck suite and the OU ensemble
/// cross-validation.
pub fn run_oracle_suite(config: &ExperimentConfig) -> Result<OracleReport> {
    let potential = config.potential()?;
    let cells = config.oracle.cells;
    let half = config.oracle.half_extent;

    // Stationarity of f = 1 under the full asymmetric dynamics.
    let oracle = FpOracle::new(potential, half, cells, 1.0)?;
    let mut state = oracle.uniform_state();
    let dt = oracle.max_dt();
    for _ in 0..50 {
        oracle.step(&mut state, dt)?;
    }
    let stationarity = state.f.iter().fold(0.0f64, |acc, v| acc.max((v - 1.0).abs()));

    // Entropy identity dS/dt = -I_A on a short smooth run.
    let cov = DMatrix::from_column_slice(2, 2, &[0.92, 0.02, 0.02, 0.94]);
    let mut gstate = oracle.gaussian_state(&[0.25, 0.12], &cov)?;
    let series = oracle.entropy_series(&mut gstate, dt, 40, 4)?;
    let mut entropy_resid = 0.0f64;
    for i in 1..series.len() - 1 {
        let ds = (series[i + 1].1 - series[i - 1].1) / (series[i + 1].0 - series[i - 1].0);
        entropy_resid = entropy_resid.max((ds + series[i].2).abs());
    }
    let entropy_monotone = series.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);

    // I_A is J-free: identical initial data under s = 0 and s = 1.
    let o0 = FpOracle::new(potential, half, cells.min(128), 0.0)?;
    let o1 = FpOracle::new(potential, half, cells.min(128), 1.0)?;
    let s0 = o0.gaussian_state(&[0.4, 0.2], &cov)?;
    let s1 = o1.gaussian_state(&[0.4, 0.2], &cov)?;
    let fisher_resid =
        (o0.fisher_a(&s0) - o1.fisher_a(&s1)).abs() / o0.fisher_a(&s0).max(1e-300);

    // OU cross-validation: ensemble Theta vs the exact Gaussian value.
    let n = config.oracle.n;
    let m = (n / 8).max(4);
    let scheme = BlockScheme::new(n, m)?;
    let cg = CoarseGrain::new(scheme)?;
    let ops = LatticeOps::new(LatticeDim::new(n)?);
    let t_end = 0.02;
    let checkpoints: Vec<f64> = (0..5).map(|i| t_end * i as f64 / 4.0).collect();
    let gaussian = Potential::gaussian();
    let amp = 0.5;
    let profile = move |t: f64| amp * (2.0 * std::f64::consts::PI * t).cos();
    let eta0 = MacroVector::new(StepFunction::from_fn_cell_avg(profile, m).as_slice().to_vec());
    let sim = SimConfig {
        scheme,
        potential: gaussian,
        dt: auto_dt(n, &gaussian, t_end),
        t_end,
        ensemble_size: config.oracle.ensemble,
        seed: config.seed,
        integrator: Integrator::SemiImplicit,
        checkpoints: checkpoints.clone(),
    };
    let run = run_ensemble(&sim, None, &InitialData::ConditionalMu(eta0.clone()))?;

    // Exact moments of the conditional-mu initial law: mean = lift(eta0),
    // covariance = fluctuation projector.
    let lifted = cg.lift_npt(&eta0)?;
    let mean0 = DVector::from_column_slice(lifted.as_slice());
    let mut cov0 = DMatrix::<f64>::zeros(n, n);
    let k = scheme.k();
    for b in 0..m {
        for i in 0..k {
            for j in 0..k {
                let d = if i == j { 1.0 } else { 0.0 };
                cov0[(b * k + i, b * k + j)] = d - 1.0 / k as f64;
            }
        }
    }
    let gtable = PsiKTable::build(&gaussian, k, config.grid_spec())?;
    let traj = integrate_macro(&cg, &gtable, &eta0, t_end, &checkpoints, 1e-8)?;

    let mut theta_sigma_max = 0.0f64;
    for (ci, cp) in run.checkpoints.iter().enumerate() {
        let exact_moments = ou_propagate(&ops, &mean0, &cov0, cp.time)?;
        let exact = ou_theta_exact(&ops, &cg, &exact_moments, traj.at(ci))?;
        let (est, stderr) = theta_estimate(&ops, &cg, &cp.states, traj.at(ci))?;
        if stderr > 0.0 {
            theta_sigma_max = theta_sigma_max.max((est - exact).abs() / stderr);
        }
    }

    // Stationary start stays stationary (variance diagonal within MC bars).
    let sim_stat = SimConfig {
        checkpoints: checkpoints.clone(),
        seed: config.seed ^ 0x51a7,
        ..sim
    };
    let run_stat = run_ensemble(&sim_stat, None, &InitialData::StationaryGaussian)?;
    let r = config.oracle.ensemble as f64;
    let var_sigma = (2.0 / r).sqrt(); // stderr of a unit-variance estimate
    let expected_var = 1.0 - 1.0 / n as f64; // projected identity diagonal
    let mut stat_sigma_max = 0.0f64;
    for cp in &run_stat.checkpoints {
        for v in &cp.empirical_var_diag {
            stat_sigma_max = stat_sigma_max.max((v - expected_var).abs() / var_sigma);
        }
    }

    let checks = vec![
        IdentityCheck::new("FP stationarity of f = 1", stationarity, 1e-8),
        IdentityCheck::new("FP entropy identity |dS/dt + I_A|", entropy_resid, 1e-4),
        IdentityCheck::new(
            "FP entropy monotone",
            if entropy_monotone { 0.0 } else { 1.0 },
            0.0,
        ),
        IdentityCheck::new("Fisher term independent of J", fisher_resid, 1e-12),
        IdentityCheck::new("OU Theta cross-check (MC sigmas)", theta_sigma_max, 3.0),
        IdentityCheck::new("OU stationary start (MC sigmas)", stat_sigma_max, 5.0),
    ];
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(OracleReport {
        stationarity_residual: stationarity,
        entropy_identity_residual: entropy_resid,
        entropy_monotone,
        fisher_j_independent_residual: fisher_resid,
        ou_theta_max_sigma_distance: theta_sigma_max,
        ou_stationary_max_sigma_distance: stat_sigma_max,
        entropy_series: series,
        checks,
        all_pass,
    })
}

/// Gaussian relative-entropy trend toward the local Gibbs state: the
/// time-integrated per-site KL of the OU law (local-Gibbs start, identity
/// covariance preserved) against the lifted macroscopic profile.
pub fn gibbs_entropy_integral(
    config: &ExperimentConfig,
    n: usize,
    m: usize,
) -> Result<f64> {
    let potential = config.potential()?;
    if !potential.is_gaussian() {
        return Err(Error::Config("Gaussian entropy proxy requires a = 0".into()));
    }
    let scheme = BlockScheme::new(n, m)?;
    let cg = CoarseGrain::new(scheme)?;
    let ops = LatticeOps::new(LatticeDim::new(n)?);
    let grid = config.grid_spec();
    let table = PsiKTable::build(&potential, scheme.k(), grid)?;

    let amp = config.sim.amplitude;
    let profile = move |t: f64| amp * (2.0 * std::f64::consts::PI * t).cos();
    let eta0 = MacroVector::new(StepFunction::from_fn_cell_avg(profile, m).as_slice().to_vec());
    let t_end = config.sim.t_end;
    let n_cp = config.sim.checkpoints.max(5);
    let checkpoints: Vec<f64> = (0..n_cp).map(|i| t_end * i as f64 / (n_cp - 1) as f64).collect();
    let traj = integrate_macro(&cg, &table, &eta0, t_end, &checkpoints, 1e-8)?;

    // Local-Gibbs start: mean = lift(eta0), covariance stays the projected
    // identity for all time, so the per-site KL to the local Gibbs state
    // N(lift(eta(t)), Id) is |proj(m(t) - lift eta(t))|^2 / (2N).
    let lifted0 = cg.lift_npt(&eta0)?;
    let m0 = DVector::from_column_slice(lifted0.as_slice());
    let mut kl_series = Vec::with_capacity(checkpoints.len());
    for (ci, &t) in checkpoints.iter().enumerate() {
        let moments: OuMoments = ou_propagate(
            &ops,
            &m0,
            &DMatrix::from_fn(n, n, |i, j| {
                (if i == j { 1.0 } else { 0.0 }) - 1.0 / n as f64
            }),
            t,
        )?;
        let lift_t = cg.lift_npt(traj.at(ci))?;
        let mut d: Vec<f64> = moments
            .mean
            .iter()
            .zip(lift_t.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let dm = d.iter().sum::<f64>() / n as f64;
        for v in &mut d {
            *v -= dm;
        }
        let kl = 0.5 * d.iter().map(|v| v * v).sum::<f64>() / n as f64;
        kl_series.push(kl);
    }
    Ok(trapezoid(&checkpoints, &kl_series))
}

/// Output bundle written by the binary.
pub struct OutputWriter {
    dir: PathBuf,
    config_hash: String,
}

impl OutputWriter {
    pub fn new(dir: &str, config_hash: &str) -> Result<Self> {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        Ok(OutputWriter { dir, config_hash: config_hash.into() })
    }

    pub fn write_manifest(&self, config: &ExperimentConfig, extra: serde_json::Value) -> Result<()> {
        let manifest = serde_json::json!({
            "config": config,
            "config_hash": self.config_hash,
            "extra": extra,
        });
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())?;
        Ok(())
    }

    pub fn write_verdicts<T: Serialize>(&self, verdicts: &T) -> Result<()> {
        let path = self.dir.join("verdicts.json");
        let wrapped = serde_json::json!({
            "config_hash": self.config_hash,
            "verdicts": verdicts,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&wrapped).unwrap())?;
        Ok(())
    }

    pub fn write_checkpoint_csv(&self, name: &str, rows: &[CheckpointMetrics]) -> Result<()> {
        let mut out = String::new();
        out.push_str(
            "time,theta,theta_stderr,macro_gap,macro_gap_stderr,hydro_gap,hydro_gap_stderr,alpha_hat,max_mean_drift,config_hash\n",
        );
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.time,
                r.theta,
                r.theta_stderr,
                r.macro_gap,
                r.macro_gap_stderr,
                r.hydro_gap,
                r.hydro_gap_stderr,
                r.alpha_hat,
                r.max_mean_drift,
                self.config_hash
            );
        }
        std::fs::write(self.dir.join(name), out)?;
        Ok(())
    }

    pub fn write_sweep_csv(&self, results: &[RunResult]) -> Result<()> {
        let mut out = String::new();
        out.push_str(
            "n,m,k,sup_hydro_gap,sup_hydro_gap_stderr,sup_theta,bound_margin,wall_secs,config_hash\n",
        );
        for r in results {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.n,
                r.m,
                r.k,
                r.sup_hydro_gap,
                r.sup_hydro_gap_stderr,
                r.sup_theta,
                r.bound.margin,
                r.wall_secs,
                self.config_hash
            );
        }
        std::fs::write(self.dir.join("results.csv"), out)?;
        Ok(())
    }

    pub fn write_entropy_csv(&self, series: &[(f64, f64, f64)]) -> Result<()> {
        let mut out = String::new();
        out.push_str("time,entropy,fisher_a,config_hash\n");
        for (t, s, i) in series {
            let _ = writeln!(out, "{t},{s},{i},{}", self.config_hash);
        }
        std::fs::write(self.dir.join("results.csv"), out)?;
        Ok(())
    }

    pub fn write_profile_csv(&self, name: &str, times: &[f64], profiles: &[Vec<f64>]) -> Result<()> {
        let mut out = String::new();
        let width = profiles.first().map_or(0, |p| p.len());
        out.push_str("time");
        for i in 0..width {
            let _ = write!(out, ",v{i}");
        }
        let _ = writeln!(out, ",config_hash");
        for (t, p) in times.iter().zip(profiles) {
            let _ = write!(out, "{t}");
            for v in p {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", self.config_hash);
        }
        std::fs::write(self.dir.join(name), out)?;
        Ok(())
    }
}

/// Sweep summary: per-point results plus the monotone-trend verdict.
#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub results: Vec<RunResult>,
    /// Gap decreasing along the schedule beyond the MC error bars.
    pub hydro_gap_monotone: bool,
    pub all_bounds_hold: bool,
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepSummary> {
    let mut results = Vec::new();
    for &(n, m) in &config.schedule {
        results.push(execute_run(config, n, m)?);
    }
    let mut monotone = true;
    for w in results.windows(2) {
        let slack = 2.0 * (w[0].sup_hydro_gap_stderr + w[1].sup_hydro_gap_stderr);
        if w[1].sup_hydro_gap >= w[0].sup_hydro_gap - slack {
            monotone = false;
        }
    }
    let all_bounds_hold = results.iter().all(|r| r.bound.holds);
    Ok(SweepSummary { results, hydro_gap_monotone: monotone, all_bounds_hold })
}

/// ODE-only run for the `macro` mode: trajectory of the block profile.
pub fn run_macro_only(config: &ExperimentConfig) -> Result<MacroTrajectory> {
    let &(n, m) = config.schedule.first().ok_or_else(|| Error::Config("empty schedule".into()))?;
    let potential = config.potential()?;
    let scheme = BlockScheme::new(n, m)?;
    let cg = CoarseGrain::new(scheme)?;
    let table = PsiKTable::build(&potential, scheme.k(), config.grid_spec())?;
    let amp = config.sim.amplitude;
    let mean = config.model.mean;
    let profile = move |t: f64| mean + amp * (2.0 * std::f64::consts::PI * t).cos();
    let eta0 = MacroVector::new(StepFunction::from_fn_cell_avg(profile, m).as_slice().to_vec());
    let t_end = config.sim.t_end;
    let n_cp = config.sim.checkpoints;
    let cps: Vec<f64> = (0..n_cp).map(|i| t_end * i as f64 / (n_cp - 1) as f64).collect();
    integrate_macro(&cg, &table, &eta0, t_end, &cps, 1e-8)
}

/// PDE-only run for the `pde` mode.
pub fn run_pde_only(config: &ExperimentConfig) -> Result<crate::macro_pde::PdeGridSolution> {
    let potential = config.potential()?;
    let cramer = CramerTable::build(&potential, config.grid_spec())?;
    let amp = config.sim.amplitude;
    let mean = config.model.mean;
    let profile = move |t: f64| mean + amp * (2.0 * std::f64::consts::PI * t).cos();
    let zeta0 = StepFunction::from_fn_cell_avg(profile, config.pde.mesh);
    let t_end = config.sim.t_end;
    let n_cp = config.sim.checkpoints;
    let cps: Vec<f64> = (0..n_cp).map(|i| t_end * i as f64 / (n_cp - 1) as f64).collect();
    solve_pde(zeta0.as_slice(), t_end, &cramer, &cps, None)
}
