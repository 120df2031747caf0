//! Single-site thermodynamics: the potential `psi`, its Cramer transform
//! `phi`, the coarse-grained block potential `psi_K`, and local Gibbs
//! weights.
//!
//! The potential family is `psi(x) = x^2/2 + a cos(b x)` with `|a| b^2 < 1`,
//! so `psi'' > 0` pointwise; `a = 0` is the exact Gaussian case.
//!
//! The Cramer transform
//!
//! ```text
//! phi(m) = sup_sigma { sigma m - log int exp(sigma x - psi(x)) dx }
//! ```
//!
//! is computed by a safeguarded Newton solve of `tilted_mean(sigma) = m`;
//! then `phi'(m) = sigma*` and `phi''(m) = 1 / Var_{sigma*}`.
//!
//! `psi_K(m)` is (up to an additive constant, which is all the dynamics ever
//! uses) `-(1/K) log` of the density of the sample mean of `K` independent
//! sites. The density of the K-fold sum is built by convolution with
//! exponent doubling. All densities are stored in Gaussian-deflated form
//! `h_j(s) = f_j(s) exp(s^2 / 2j)`: the deflated factors stay order one
//! across the working window, the Gaussian case is represented exactly, and
//! each pairwise convolution turns into a locally-windowed weighted sum.
//! Mass is checked to `1e-10` at every combine step.

use serde::{Deserialize, Serialize};

use crate::coarse_grain::{CoarseGrain, MacroVector};
use crate::error::{Error, Result};
use crate::operators::MicroVector;

/// Half-width of the shifted quadrature window; Gaussian tails beyond it
/// carry relative mass below 1e-14 of the integral.
const QUAD_HALF_WIDTH: f64 = 12.0;

/// Relative tolerance of the adaptive quadrature refinement.
const QUAD_REL_TOL: f64 = 1e-13;

/// Convergence tolerance of the Newton solve for the tilted mean.
const NEWTON_TOL: f64 = 1e-12;

/// Mass-conservation tolerance per convolution step.
const MASS_TOL: f64 = 1e-10;

/// Single-site potential `psi(x) = x^2/2 + a cos(b x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    a: f64,
    b: f64,
}

impl Potential {
    /// Requires `|a| b^2 < 1` so that `psi'' = 1 - a b^2 cos(b x) > 0`.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a.abs() * b * b >= 1.0 {
            return Err(Error::Config(format!(
                "potential perturbation a = {a}, b = {b} violates |a| b^2 < 1"
            )));
        }
        Ok(Potential { a, b })
    }

    pub fn gaussian() -> Self {
        Potential { a: 0.0, b: 1.0 }
    }

    #[inline]
    pub fn is_gaussian(&self) -> bool {
        self.a == 0.0
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.b
    }

    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        0.5 * x * x + self.a * (self.b * x).cos()
    }

    #[inline]
    pub fn dpsi(&self, x: f64) -> f64 {
        x - self.a * self.b * (self.b * x).sin()
    }

    #[inline]
    pub fn ddpsi(&self, x: f64) -> f64 {
        1.0 - self.a * self.b * self.b * (self.b * x).cos()
    }

    /// `(|a|, |ab|, |ab^2|)`: the C0/C1/C2 norms of the perturbation.
    pub fn perturbation_norms(&self) -> (f64, f64, f64) {
        let a = self.a.abs();
        (a, a * self.b.abs(), a * self.b * self.b)
    }

    /// Upper bound on `max psi''`, used by integrator stability bounds.
    pub fn ddpsi_sup(&self) -> f64 {
        1.0 + self.a.abs() * self.b * self.b
    }
}

/// Moments of the tilted single-site measure `exp(sigma x - psi(x)) dx`,
/// computed on the shifted window `x = sigma + u`, `|u| <= 12`.
struct TiltedMoments {
    /// `log int exp(sigma x - psi(x)) dx`.
    log_partition: f64,
    mean: f64,
    var: f64,
}

fn tilted_moments(pot: &Potential, sigma: f64) -> Result<TiltedMoments> {
    // Complete the square: sigma x - x^2/2 = sigma^2/2 - u^2/2 with
    // u = x - sigma, leaving the bounded factor exp(-a cos(b (u + sigma))).
    let g = |u: f64| (-0.5 * u * u - pot.a * (pot.b * (u + sigma)).cos()).exp();

    let mut intervals = 512usize;
    let mut prev: Option<(f64, f64, f64)> = None;
    loop {
        let h = 2.0 * QUAD_HALF_WIDTH / intervals as f64;
        let mut i0 = 0.0;
        let mut i1 = 0.0;
        let mut i2 = 0.0;
        // Composite Simpson over [-12, 12].
        for idx in 0..=intervals {
            let u = -QUAD_HALF_WIDTH + idx as f64 * h;
            let w = if idx == 0 || idx == intervals {
                1.0
            } else if idx % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let f = w * g(u);
            i0 += f;
            i1 += f * u;
            i2 += f * u * u;
        }
        let scale = h / 3.0;
        let (i0, i1, i2) = (i0 * scale, i1 * scale, i2 * scale);
        if let Some((p0, p1, p2)) = prev {
            let ok = (i0 - p0).abs() <= QUAD_REL_TOL * i0.abs()
                && (i1 - p1).abs() <= QUAD_REL_TOL * i0.abs()
                && (i2 - p2).abs() <= QUAD_REL_TOL * i0.abs();
            if ok {
                let mean_u = i1 / i0;
                let var = i2 / i0 - mean_u * mean_u;
                return Ok(TiltedMoments {
                    log_partition: 0.5 * sigma * sigma + i0.ln(),
                    mean: sigma + mean_u,
                    var,
                });
            }
        }
        prev = Some((i0, i1, i2));
        intervals *= 2;
        if intervals > 1 << 22 {
            return Err(Error::Quadrature(format!(
                "tilted moments did not converge at sigma = {sigma}"
            )));
        }
    }
}

/// `log int_R exp(sigma x - psi(x)) dx` by adaptive quadrature on a shifted
/// window with tail mass below 1e-14.
pub fn log_partition(pot: &Potential, sigma: f64) -> Result<f64> {
    Ok(tilted_moments(pot, sigma)?.log_partition)
}

/// Mean of the tilted single-site measure at parameter `sigma`; the inverse
/// function of `phi'`.
pub fn tilted_mean(pot: &Potential, sigma: f64) -> Result<f64> {
    Ok(tilted_moments(pot, sigma)?.mean)
}

/// One point of the Cramer transform: `phi(m)`, `phi'(m) = sigma*`,
/// `phi''(m) = 1/Var_{sigma*}`.
#[derive(Clone, Copy, Debug)]
pub struct CramerPoint {
    pub phi: f64,
    pub dphi: f64,
    pub ddphi: f64,
}

/// Solves `tilted_mean(sigma) = m` by safeguarded Newton (bisection
/// fallback) and assembles the Legendre data at `m`.
pub fn cramer(pot: &Potential, m: f64) -> Result<CramerPoint> {
    // The tilted mean is sigma plus a bounded correction, so a bracket of
    // half-width (1 + |a b|) around m always contains sigma*.
    let slack = 1.0 + pot.a.abs() * pot.b.abs();
    let mut lo = m - slack;
    let mut hi = m + slack;
    let mut f_lo = tilted_moments(pot, lo)?.mean - m;
    let mut f_hi = tilted_moments(pot, hi)?.mean - m;
    for _ in 0..60 {
        if f_lo <= 0.0 && f_hi >= 0.0 {
            break;
        }
        if f_lo > 0.0 {
            lo -= slack;
            f_lo = tilted_moments(pot, lo)?.mean - m;
        }
        if f_hi < 0.0 {
            hi += slack;
            f_hi = tilted_moments(pot, hi)?.mean - m;
        }
    }
    if !(f_lo <= 0.0 && f_hi >= 0.0) {
        return Err(Error::RootFinding(format!(
            "no bracket for tilted mean = {m}"
        )));
    }

    let mut sigma = 0.5 * (lo + hi);
    for _ in 0..100 {
        let mom = tilted_moments(pot, sigma)?;
        let resid = mom.mean - m;
        if resid.abs() <= NEWTON_TOL {
            return Ok(CramerPoint {
                phi: sigma * m - mom.log_partition,
                dphi: sigma,
                ddphi: 1.0 / mom.var,
            });
        }
        if resid > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let newton = sigma - resid / mom.var;
        sigma = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::RootFinding(format!(
        "Newton/bisection did not converge for tilted mean = {m}"
    )))
}

/// Uniform working grid `[-m_max, m_max]` with mesh `1/subdiv`;
/// `m_max * subdiv` must be an integer so table nodes align with the
/// convolution grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m_max: f64,
    pub subdiv: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { m_max: 2.5, subdiv: 64 }
    }
}

impl GridSpec {
    pub fn mesh(&self) -> f64 {
        1.0 / self.subdiv as f64
    }

    /// Nodes per side of zero.
    fn half_nodes(&self) -> Result<usize> {
        let exact = self.m_max * self.subdiv as f64;
        if !(exact.fract() == 0.0 && exact >= 1.0) {
            return Err(Error::Config(format!(
                "grid m_max = {} must be an integer multiple of 1/{}",
                self.m_max, self.subdiv
            )));
        }
        Ok(exact as usize)
    }

    pub fn nodes(&self) -> Result<usize> {
        Ok(2 * self.half_nodes()? + 1)
    }

    pub fn node(&self, i: usize) -> f64 {
        -self.m_max + i as f64 * self.mesh()
    }
}

/// Cubic (4-point Lagrange) interpolation on a uniform grid.
fn cubic_eval(lo: f64, mesh: f64, vals: &[f64], x: f64) -> Result<f64> {
    let hi = lo + mesh * (vals.len() - 1) as f64;
    if x < lo - 1e-12 || x > hi + 1e-12 {
        return Err(Error::OutOfTableRange { value: x, lo, hi });
    }
    let t = ((x - lo) / mesh).clamp(0.0, (vals.len() - 1) as f64);
    let mut i1 = t.floor() as usize;
    i1 = i1.clamp(1, vals.len() - 3);
    let s = t - i1 as f64;
    let (f0, f1, f2, f3) = (vals[i1 - 1], vals[i1], vals[i1 + 1], vals[i1 + 2]);
    // Lagrange basis on nodes -1, 0, 1, 2.
    let l0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
    let l1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
    let l2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
    let l3 = (s + 1.0) * s * (s - 1.0) / 6.0;
    Ok(f0 * l0 + f1 * l1 + f2 * l2 + f3 * l3)
}

/// Tabulated Cramer transform with cubic interpolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CramerTable {
    pub version: u32,
    pub potential: Potential,
    pub grid: GridSpec,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    ddphi: Vec<f64>,
}

impl CramerTable {
    pub fn build(pot: &Potential, grid: GridSpec) -> Result<Self> {
        let nodes = grid.nodes()?;
        let mut phi = Vec::with_capacity(nodes);
        let mut dphi = Vec::with_capacity(nodes);
        let mut ddphi = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let p = cramer(pot, grid.node(i))?;
            if p.ddphi <= 0.0 {
                return Err(Error::NumericalAbort(format!(
                    "phi'' <= 0 at m = {} (Cramer transform must be uniformly convex)",
                    grid.node(i)
                )));
            }
            phi.push(p.phi);
            dphi.push(p.dphi);
            ddphi.push(p.ddphi);
        }
        // phi' must be monotone increasing across the grid.
        if dphi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::NumericalAbort(
                "phi' not monotone across the working grid".into(),
            ));
        }
        Ok(CramerTable {
            version: 1,
            potential: *pot,
            grid,
            phi,
            dphi,
            ddphi,
        })
    }

    pub fn phi(&self, m: f64) -> Result<f64> {
        cubic_eval(-self.grid.m_max, self.grid.mesh(), &self.phi, m)
    }

    pub fn dphi(&self, m: f64) -> Result<f64> {
        cubic_eval(-self.grid.m_max, self.grid.mesh(), &self.dphi, m)
    }

    pub fn ddphi(&self, m: f64) -> Result<f64> {
        cubic_eval(-self.grid.m_max, self.grid.mesh(), &self.ddphi, m)
    }

    pub fn eval(&self, m: f64) -> Result<(f64, f64, f64)> {
        Ok((self.phi(m)?, self.dphi(m)?, self.ddphi(m)?))
    }

    pub fn min_phi(&self) -> f64 {
        self.phi.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `(min phi'', max phi'')` over the grid.
    pub fn convexity_bounds(&self) -> ConvexityBounds {
        bounds_of(&self.ddphi)
    }

    pub fn nodes(&self) -> usize {
        self.phi.len()
    }

    pub fn ddphi_nodes(&self) -> &[f64] {
        &self.ddphi
    }

    pub fn m_max(&self) -> f64 {
        self.grid.m_max
    }
}

/// Convexity window `(lambda, Lambda)` of a Hessian profile.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvexityBounds {
    pub lambda: f64,
    pub lambda_big: f64,
}

impl ConvexityBounds {
    pub fn is_uniformly_convex(&self) -> bool {
        self.lambda > 0.0
    }
}

fn bounds_of(vals: &[f64]) -> ConvexityBounds {
    let lambda = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_big = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ConvexityBounds { lambda, lambda_big }
}

/// Density of the sum of `j` sites, stored Gaussian-deflated on a uniform
/// symmetric grid: `vals[i] ~ f_j(s_i) exp(s_i^2 / 2j)`, sup-normalized.
struct SumDensity {
    j: usize,
    h: f64,
    radius_idx: i64,
    vals: Vec<f64>,
}

impl SumDensity {
    fn single_site(pot: &Potential, h: f64, radius_idx: i64) -> Self {
        let vals = (-radius_idx..=radius_idx)
            .map(|i| (-pot.a * (pot.b * (i as f64 * h)).cos()).exp())
            .collect();
        SumDensity { j: 1, h, radius_idx, vals }
    }

    #[inline]
    fn value(&self, idx: i64) -> f64 {
        if idx < -self.radius_idx || idx > self.radius_idx {
            0.0
        } else {
            self.vals[(idx + self.radius_idx) as usize]
        }
    }

    /// Total mass `int f_j(s) ds` in the deflated representation.
    fn mass(&self) -> f64 {
        let two_j = 2.0 * self.j as f64;
        let mut acc = 0.0;
        for (off, &v) in self.vals.iter().enumerate() {
            let s = (off as i64 - self.radius_idx) as f64 * self.h;
            acc += (-s * s / two_j).exp() * v;
        }
        acc * self.h
    }

    fn renormalize(&mut self) {
        let sup = self.vals.iter().cloned().fold(0.0f64, f64::max);
        if sup > 0.0 {
            for v in &mut self.vals {
                *v /= sup;
            }
        }
    }
}

/// Convolution of two sum densities in deflated form. Completing the square
/// in the exponents leaves a Gaussian weight of width `sqrt(j1 j2/(j1+j2))`
/// centered at `u = s j1/(j1+j2)`, so the sum is local.
fn combine(a: &SumDensity, b: &SumDensity, target_radius_idx: i64) -> Result<SumDensity> {
    assert_eq!(a.h, b.h);
    let h = a.h;
    let j1 = a.j as f64;
    let j2 = b.j as f64;
    let j_sum = j1 + j2;
    let j_red = j1 * j2 / j_sum;
    // Weight cutoff: beyond 9 sqrt(j_red) the Gaussian factor is below 4e-18.
    let win = (9.0 * j_red.sqrt() / h).ceil() as i64 + 2;

    let mut vals = vec![0.0f64; (2 * target_radius_idx + 1) as usize];
    for (off, slot) in vals.iter_mut().enumerate() {
        let s_idx = off as i64 - target_radius_idx;
        let s = s_idx as f64 * h;
        let center = s * j1 / j_sum;
        let c_idx = (center / h).round() as i64;
        let mut acc = 0.0;
        for u_idx in (c_idx - win).max(-a.radius_idx)..=(c_idx + win).min(a.radius_idx) {
            let bv = b.value(s_idx - u_idx);
            if bv == 0.0 {
                continue;
            }
            let u = u_idx as f64 * h;
            let d = u - center;
            acc += (-d * d / (2.0 * j_red)).exp() * a.value(u_idx) * bv;
        }
        *slot = acc * h;
    }

    let mut out = SumDensity {
        j: a.j + b.j,
        h,
        radius_idx: target_radius_idx,
        vals,
    };
    let expected = a.mass() * b.mass();
    let got = out.mass();
    let defect = (got - expected).abs() / expected;
    if defect > MASS_TOL {
        return Err(Error::MassLoss { defect, tol: MASS_TOL });
    }
    out.renormalize();
    Ok(out)
}

/// Window radius (in grid steps) for the density of the sum of `j` sites.
fn window_radius_idx(j: usize, m_max: f64, h: f64) -> i64 {
    let pad = 16.0 + 12.0 * (j as f64).sqrt();
    ((j as f64 * m_max + pad) / h).ceil() as i64
}

/// Tabulated coarse-grained potential `psi_K` (up to an additive constant)
/// with its first two derivatives.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiKTable {
    pub version: u32,
    pub potential: Potential,
    pub k: usize,
    pub grid: GridSpec,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    ddpsi: Vec<f64>,
}

impl PsiKTable {
    /// Builds the table by `k`-fold convolution (binary exponent doubling)
    /// of the single-site density, then 4th-order finite differencing of the
    /// log-density.
    pub fn build(pot: &Potential, k: usize, grid: GridSpec) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("block size k must be >= 1".into()));
        }
        let nodes = grid.nodes()?;
        let half = (nodes - 1) / 2;
        let h = grid.mesh();

        let density = build_sum_density(pot, k, grid.m_max, h)?;

        // log of the deflated density and its centered 4th-order differences
        // on the sum grid; psi_K(m) = m^2/2 - (1/k) log h_k(k m) + const.
        let need = (k * half) as i64 + 2;
        assert!(density.radius_idx >= need);
        let l = |idx: i64| density.value(idx).ln();

        let mut psi = Vec::with_capacity(nodes);
        let mut dpsi = Vec::with_capacity(nodes);
        let mut ddpsi = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let m = grid.node(i);
            let t = (i as i64 - half as i64) * k as i64;
            let lm2 = l(t - 2);
            let lm1 = l(t - 1);
            let l0 = l(t);
            let lp1 = l(t + 1);
            let lp2 = l(t + 2);
            let d1 = (lm2 - 8.0 * lm1 + 8.0 * lp1 - lp2) / (12.0 * h);
            let d2 = (-lm2 + 16.0 * lm1 - 30.0 * l0 + 16.0 * lp1 - lp2) / (12.0 * h * h);
            psi.push(0.5 * m * m - l0 / k as f64);
            dpsi.push(m - d1);
            ddpsi.push(1.0 - k as f64 * d2);
        }

        Ok(PsiKTable {
            version: 1,
            potential: *pot,
            k,
            grid,
            psi,
            dpsi,
            ddpsi,
        })
    }

    pub fn psi(&self, m: f64) -> Result<f64> {
        cubic_eval(-self.grid.m_max, self.grid.mesh(), &self.psi, m)
    }

    pub fn dpsi(&self, m: f64) -> Result<f64> {
        cubic_eval(-self.grid.m_max, self.grid.mesh(), &self.dpsi, m)
    }

    pub fn ddpsi(&self, m: f64) -> Result<f64> {
        cubic_eval(-self.grid.m_max, self.grid.mesh(), &self.ddpsi, m)
    }

    pub fn eval(&self, m: f64) -> Result<(f64, f64, f64)> {
        Ok((self.psi(m)?, self.dpsi(m)?, self.ddpsi(m)?))
    }

    /// Minimum of the tabulated `psi_K`; subtracting it normalizes the
    /// additive constant so `psi_K >= 0` with min 0 on the working interval.
    pub fn min_psi(&self) -> f64 {
        self.psi.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `(lambda, Lambda) = (min psi_K'', max psi_K'')` over the grid: the
    /// convexity window of the macroscopic Hessian.
    pub fn convexity_bounds(&self) -> ConvexityBounds {
        bounds_of(&self.ddpsi)
    }

    pub fn ddpsi_nodes(&self) -> &[f64] {
        &self.ddpsi
    }

    pub fn m_max(&self) -> f64 {
        self.grid.m_max
    }
}

fn build_sum_density(pot: &Potential, k: usize, m_max: f64, h: f64) -> Result<SumDensity> {
    let radius_for = |j: usize| window_radius_idx(j, m_max, h);
    let mut single = SumDensity::single_site(pot, h, radius_for(1));
    single.renormalize();
    if k == 1 {
        return Ok(single);
    }

    let mut acc: Option<SumDensity> = None;
    let mut pow = single;
    let mut bits = k;
    loop {
        if bits & 1 == 1 {
            acc = Some(match acc {
                None => clone_density(&pow),
                Some(a) => combine(&a, &pow, radius_for(a.j + pow.j))?,
            });
        }
        bits >>= 1;
        if bits == 0 {
            break;
        }
        pow = combine(&pow, &pow, radius_for(2 * pow.j))?;
    }
    Ok(acc.expect("k >= 1"))
}

fn clone_density(d: &SumDensity) -> SumDensity {
    SumDensity {
        j: d.j,
        h: d.h,
        radius_idx: d.radius_idx,
        vals: d.vals.clone(),
    }
}

/// Block-space gradient of the coarse-grained Hamiltonian
/// `Hbar(y) = (1/M) sum psi_K(y_i)`: componentwise `psi_K'(y_i)`, projected
/// onto the mean-zero tangent space of the fixed-mean constraint.
pub fn macro_grad_h(y: &MacroVector, table: &PsiKTable) -> Result<MacroVector> {
    let mut g = Vec::with_capacity(y.len());
    for &v in y.as_slice() {
        g.push(table.dpsi(v)?);
    }
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    for v in &mut g {
        *v -= mean;
    }
    Ok(MacroVector::new(g))
}

/// `Hbar(y)` up to its additive constant, normalized so the tabulated
/// minimum is zero (used by the dissipation monitor).
pub fn macro_h(y: &MacroVector, table: &PsiKTable) -> Result<f64> {
    let offset = table.min_psi();
    let mut acc = 0.0;
    for &v in y.as_slice() {
        acc += table.psi(v)? - offset;
    }
    Ok(acc / y.len() as f64)
}

/// Log-weight of the local Gibbs state with profile `eta` at microscopic
/// state `x`: `N P^t grad Hbar(eta) . x` (log-density versus `mu`,
/// unnormalized).
pub fn local_gibbs_log_weight(
    cg: &CoarseGrain,
    x: &MicroVector,
    eta: &MacroVector,
    table: &PsiKTable,
) -> Result<f64> {
    let grad = macro_grad_h(eta, table)?;
    let lifted = cg.lift_npt(&grad)?;
    Ok(lifted.dot(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LOG_SQRT_2PI: f64 = 0.9189385332046727;

    #[test]
    fn potential_validation() {
        assert!(Potential::new(0.1, 1.0).is_ok());
        assert!(Potential::new(0.5, 2.0).is_err()); // 0.5 * 4 >= 1
    }

    #[test]
    fn gaussian_log_partition_closed_form() {
        let pot = Potential::gaussian();
        assert_relative_eq!(log_partition(&pot, 0.0).unwrap(), LOG_SQRT_2PI, epsilon = 1e-13);
        for sigma in [-2.0, -0.3, 0.7, 1.9] {
            assert_relative_eq!(
                log_partition(&pot, sigma).unwrap(),
                0.5 * sigma * sigma + LOG_SQRT_2PI,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn anharmonic_log_partition_vs_reference_quadrature() {
        // Independent oracle: plain trapezoid at 10x the resolution on a
        // wider window.
        let pot = Potential::new(0.1, 1.0).unwrap();
        let sigma = 0.0;
        let (lo, hi, steps) = (-20.0f64, 20.0f64, 400_000usize);
        let h = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            acc += w * (sigma * x - pot.psi(x)).exp();
        }
        let reference = (acc * h).ln();
        assert_relative_eq!(log_partition(&pot, sigma).unwrap(), reference, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_cramer_is_identity() {
        let pot = Potential::gaussian();
        for m in [-2.0, -0.5, 0.0, 1.25, 2.0] {
            let p = cramer(&pot, m).unwrap();
            assert_relative_eq!(p.dphi, m, epsilon = 1e-10);
            assert_relative_eq!(p.ddphi, 1.0, epsilon = 1e-10);
            assert_relative_eq!(p.phi, 0.5 * m * m - LOG_SQRT_2PI, epsilon = 1e-10);
        }
    }

    #[test]
    fn even_potential_has_critical_point_at_zero() {
        let pot = Potential::new(0.1, 1.0).unwrap();
        let p = cramer(&pot, 0.0).unwrap();
        assert!(p.dphi.abs() < 1e-10);
    }

    #[test]
    fn anharmonic_cramer_matches_grid_maximization() {
        // Brute-force sup over a sigma grid of sigma m - log_partition.
        let pot = Potential::new(0.1, 1.0).unwrap();
        let m = 0.5;
        let p = cramer(&pot, m).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut best_sigma = 0.0;
        for i in 0..=4000 {
            let sigma = -2.0 + 4.0 * i as f64 / 4000.0;
            let v = sigma * m - log_partition(&pot, sigma).unwrap();
            if v > best {
                best = v;
                best_sigma = sigma;
            }
        }
        assert!((p.phi - best).abs() < 1e-6, "phi = {}, grid sup = {best}", p.phi);
        assert!((p.dphi - best_sigma).abs() < 2e-3);
    }

    #[test]
    fn legendre_duality_residual() {
        let pot = Potential::new(0.1, 1.0).unwrap();
        for m in [-1.5, -0.2, 0.4, 1.8] {
            let p = cramer(&pot, m).unwrap();
            assert!((tilted_mean(&pot, p.dphi).unwrap() - m).abs() <= 1e-10);
            // phi'' * Var = 1 by construction at the solved point.
            let var = tilted_moments(&pot, p.dphi).unwrap().var;
            assert_relative_eq!(p.ddphi * var, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn gaussian_psi_k_is_exactly_quadratic() {
        let pot = Potential::gaussian();
        let grid = GridSpec { m_max: 2.0, subdiv: 64 };
        for k in [1usize, 4, 16] {
            let t = PsiKTable::build(&pot, k, grid).unwrap();
            let b = t.convexity_bounds();
            assert!((b.lambda - 1.0).abs() < 1e-6, "k = {k}: lambda = {}", b.lambda);
            assert!((b.lambda_big - 1.0).abs() < 1e-6, "k = {k}: Lambda = {}", b.lambda_big);
            assert_relative_eq!(t.dpsi(0.75).unwrap(), 0.75, epsilon = 1e-8);
        }
    }

    #[test]
    fn psi_1_equals_psi_up_to_constant() {
        let pot = Potential::new(0.1, 1.0).unwrap();
        let grid = GridSpec { m_max: 2.0, subdiv: 64 };
        let t = PsiKTable::build(&pot, 1, grid).unwrap();
        let c = t.psi(0.0).unwrap() - pot.psi(0.0);
        for m in [-1.5, -0.4, 0.9, 2.0] {
            assert_relative_eq!(t.psi(m).unwrap() - pot.psi(m), c, epsilon = 1e-7);
            assert_relative_eq!(t.dpsi(m).unwrap(), pot.dpsi(m), epsilon = 1e-6);
            assert_relative_eq!(t.ddpsi(m).unwrap(), pot.ddpsi(m), epsilon = 1e-5);
        }
    }

    #[test]
    fn psi_k_converges_to_cramer_in_c2() {
        let pot = Potential::new(0.1, 1.0).unwrap();
        let grid = GridSpec { m_max: 2.0, subdiv: 64 };
        let cram = CramerTable::build(&pot, grid).unwrap();
        let mut prev = f64::INFINITY;
        for k in [8usize, 16, 32, 64] {
            let t = PsiKTable::build(&pot, k, grid).unwrap();
            let mut e = 0.0f64;
            for i in 0..t.ddpsi_nodes().len() {
                e = e.max((t.ddpsi_nodes()[i] - cram.ddphi_nodes()[i]).abs());
            }
            assert!(e < prev, "e_K not decreasing at k = {k}: {e} !< {prev}");
            prev = e;
        }
        assert!(prev < 0.02, "e_64 = {prev}");
    }

    #[test]
    fn convexity_bounds_anharmonic_large_k() {
        let pot = Potential::new(0.1, 1.0).unwrap();
        let grid = GridSpec { m_max: 2.0, subdiv: 64 };
        let t = PsiKTable::build(&pot, 32, grid).unwrap();
        let b = t.convexity_bounds();
        assert!(b.lambda > 0.8 && b.lambda_big < 1.2, "bounds = {b:?}");
        assert!(b.is_uniformly_convex());

        // Trend toward the Cramer bounds.
        let cram = CramerTable::build(&pot, grid).unwrap().convexity_bounds();
        let t64 = PsiKTable::build(&pot, 64, grid).unwrap().convexity_bounds();
        assert!((t64.lambda - cram.lambda).abs() <= (b.lambda - cram.lambda).abs() + 1e-9);
    }

    #[test]
    fn macro_grad_h_gaussian_and_fd() {
        use crate::coarse_grain::{y_inner, BlockScheme, CoarseGrain};

        let pot = Potential::gaussian();
        let grid = GridSpec { m_max: 2.5, subdiv: 64 };
        let t = PsiKTable::build(&pot, 4, grid).unwrap();

        // Constant profile: projected gradient vanishes.
        let y = MacroVector::new(vec![0.3; 6]);
        let g = macro_grad_h(&y, &t).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-9));

        // Gaussian case: gradient is y - mean(y).
        let y = MacroVector::new(vec![0.4, -0.2, 0.1, 0.0, -0.3, 0.6]);
        let g = macro_grad_h(&y, &t).unwrap();
        let mean = y.mean();
        for (gi, yi) in g.as_slice().iter().zip(y.as_slice()) {
            assert_relative_eq!(*gi, yi - mean, epsilon = 1e-7);
        }

        // Finite-difference directional-derivative consistency, anharmonic.
        let pot = Potential::new(0.1, 1.0).unwrap();
        let t = PsiKTable::build(&pot, 4, grid).unwrap();
        let y = MacroVector::new(vec![0.4, -0.2, 0.1, 0.0, -0.3, 0.6]);
        let g = macro_grad_h(&y, &t).unwrap();
        let mut v = MacroVector::new(vec![0.21, -0.4, 0.33, 0.11, -0.05, -0.2]);
        let vm = v.mean();
        for x in v.as_mut_slice() {
            *x -= vm;
        }
        let h_at = |y: &MacroVector| -> f64 {
            y.as_slice().iter().map(|&m| t.psi(m).unwrap()).sum::<f64>() / y.len() as f64
        };
        let eps = 1e-6;
        let mut yp = y.clone();
        let mut ym = y.clone();
        for i in 0..y.len() {
            yp.as_mut_slice()[i] += eps * v.as_slice()[i];
            ym.as_mut_slice()[i] -= eps * v.as_slice()[i];
        }
        let fd = (h_at(&yp) - h_at(&ym)) / (2.0 * eps);
        let ip = y_inner(&g, &v);
        assert_relative_eq!(fd, ip, max_relative = 1e-6, epsilon = 1e-9);

        // Local Gibbs log-weight reduces to a lifted dot product.
        let cg = CoarseGrain::new(BlockScheme::new(12, 6).unwrap()).unwrap();
        let x = MicroVector::new((0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let w = local_gibbs_log_weight(&cg, &x, &y, &t).unwrap();
        let lifted = cg.lift_npt(&g).unwrap();
        assert_relative_eq!(w, lifted.dot(&x), epsilon = 1e-12);
        let zero_grad = MacroVector::new(vec![0.5; 6]);
        assert!(local_gibbs_log_weight(&cg, &x, &zero_grad, &t).unwrap().abs() < 1e-9);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let pot = Potential::gaussian();
        let grid = GridSpec { m_max: 2.0, subdiv: 64 };
        let t = PsiKTable::build(&pot, 2, grid).unwrap();
        assert!(matches!(t.psi(2.5), Err(Error::OutOfTableRange { .. })));
    }

    #[test]
    fn tables_serialize_round_trip() {
        let pot = Potential::new(0.1, 1.0).unwrap();
        let grid = GridSpec { m_max: 2.0, subdiv: 64 };
        let t = PsiKTable::build(&pot, 4, grid).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: PsiKTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back.version, t.version);
        assert_eq!(back.k, t.k);
        assert_eq!(back.ddpsi_nodes(), t.ddpsi_nodes());
    }
}
