//! Two-scale laboratory for weakly asymmetric Ginzburg-Landau dynamics on the
//! periodic lattice.
//!
//! The microscopic model is the conservative spin SDE
//!
//! ```text
//! dX = -(A + J) grad H(X) dt + sqrt(2A) dW,
//! ```
//!
//! where `A` is the scaled discrete Laplacian, `J` the scaled discrete
//! derivative (antisymmetric), and `H(x) = sum_i psi(x_i)` a convex single-site
//! Hamiltonian. Block averaging over `M` blocks of size `K = N/M` produces a
//! macroscopic ODE driven by the coarse-grained operators `Abar`, `Jbar`, and
//! in the scaling limit the nonlinear drift-diffusion PDE
//! `d/dt zeta = (phi'(zeta))'' + (phi'(zeta))'` on the torus, with `phi` the
//! Cramer transform of `psi`.
//!
//! The crate provides, layer by layer:
//!
//! * [`operators`] - the circulant matrices `A`, `J`, `D`, their spectral
//!   inverses on the mean-zero subspace, and executable assumption checks;
//! * [`coarse_grain`] - the block-averaging operator `P`, its lift, the
//!   fluctuation projector, and the macroscopic operators built from them;
//! * [`thermo`] - the single-site potential, its Cramer transform, the
//!   coarse-grained potential `psi_K`, and local Gibbs weights;
//! * [`micro_sim`] - ensemble integration of the SDE with conditional and
//!   local-Gibbs samplers;
//! * [`macro_pde`] - solvers for the macroscopic ODE and the limiting PDE;
//! * [`metrics`] - discrete `H^{-1}` norms, the two-scale distance estimator
//!   `Theta`, the convergence-rate error functional, and Gaussian entropy
//!   functionals;
//! * [`fp_oracle`] - dense Fokker-Planck ground truth at `N = 3` and exact
//!   Ornstein-Uhlenbeck moment dynamics at any `N`;
//! * [`cli`] - experiment orchestration shared by the `twoscale` binary.

pub mod cli;
pub mod coarse_grain;
pub mod error;
pub mod fp_oracle;
pub mod macro_pde;
pub mod metrics;
pub mod micro_sim;
pub mod operators;
pub mod thermo;

pub use error::{Error, Result};
