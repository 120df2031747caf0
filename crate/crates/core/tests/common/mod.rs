#![allow(dead_code)] // shared by several test binaries, each using a subset

//! Dense ground-truth oracles for the integration tests.
//!
//! Everything here is built from the literal circulant stencil definitions
//! and generic dense linear algebra (SVD pseudo-inverses, dense eigen), with
//! no dependence on the production spectral or cumulative-sum paths it
//! checks. Intended for lattice sizes up to a few hundred.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Dense `A = n^2 (2, -1, ..., -1)` circulant.
pub fn dense_a(n: usize) -> DMatrix<f64> {
    let s = (n * n) as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 * s
        } else if (i + 1) % n == j || (j + 1) % n == i {
            -s
        } else {
            0.0
        }
    })
}

/// Dense `J = (n/2) (0, 1, ..., -1)` circulant: `J[i, i+1] = n/2`,
/// `J[i, i-1] = -n/2`.
pub fn dense_j(n: usize) -> DMatrix<f64> {
    let s = n as f64 / 2.0;
    DMatrix::from_fn(n, n, |i, j| {
        if (i + 1) % n == j {
            s
        } else if (j + 1) % n == i {
            -s
        } else {
            0.0
        }
    })
}

/// Dense `D[i, i] = n`, `D[i, i+1] = -n`.
pub fn dense_d(n: usize) -> DMatrix<f64> {
    let s = n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            s
        } else if (i + 1) % n == j {
            -s
        } else {
            0.0
        }
    })
}

/// SVD pseudo-inverse of `A` (exact inverse on the mean-zero subspace).
pub fn dense_a_pinv(n: usize) -> DMatrix<f64> {
    dense_a(n)
        .pseudo_inverse(1e-9 * (n * n) as f64)
        .expect("pseudo-inverse of the dense Laplacian")
}

/// Dense block-averaging matrix `P` (m x n) with entries `1/k`.
pub fn dense_p(n: usize, m: usize) -> DMatrix<f64> {
    let k = n / m;
    DMatrix::from_fn(m, n, |i, j| if j / k == i { 1.0 / k as f64 } else { 0.0 })
}

/// Dense lift `N P^t` (n x m): ones on the block pattern.
pub fn dense_lift(n: usize, m: usize) -> DMatrix<f64> {
    let k = n / m;
    DMatrix::from_fn(n, m, |i, j| if i / k == j { 1.0 } else { 0.0 })
}

/// Dense `Abar^{-1} = P A^{-1} N P^t`.
pub fn dense_abar_inv(n: usize, m: usize) -> DMatrix<f64> {
    dense_p(n, m) * dense_a_pinv(n) * dense_lift(n, m)
}

/// Dense `P A^{-1} J N P^t`.
pub fn dense_p_a_inv_j_npt(n: usize, m: usize) -> DMatrix<f64> {
    dense_p(n, m) * dense_a_pinv(n) * dense_j(n) * dense_lift(n, m)
}

/// Random mean-zero vector in `[-1, 1]^d`, recentred.
pub fn random_mean_zero(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let mean = v.sum() / d as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
    v
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Max-norm of the difference between a slice and a dense vector.
pub fn max_diff(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Relative l2 error of `a` against reference `b`.
pub fn rel_l2_err(a: &[f64], b: &DVector<f64>) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den = b.norm().max(1e-300);
    num / den
}
