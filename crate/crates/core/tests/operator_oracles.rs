//! Dense-oracle cross-checks of the microscopic operator layer.

mod common;

use common::*;
use rand::Rng;
use nalgebra::DVector;
use twoscale::operators::{LatticeDim, LatticeOps, MicroVector};

fn ops(n: usize) -> LatticeOps {
    LatticeOps::new(LatticeDim::new(n).unwrap())
}

#[test]
fn stencils_match_dense_matrices() {
    let mut rng = seeded_rng(101);
    for n in [3usize, 4, 7, 16, 33, 64] {
        let o = ops(n);
        let a = dense_a(n);
        let j = dense_j(n);
        let d = dense_d(n);
        for _ in 0..8 {
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
            let xm = MicroVector::new(x.iter().copied().collect());
            assert!(max_diff(o.apply_a(&xm).unwrap().as_slice(), &(&a * &x)) < 1e-10 * (n * n) as f64);
            assert!(max_diff(o.apply_j(&xm).unwrap().as_slice(), &(&j * &x)) < 1e-11 * (n * n) as f64);
            assert!(max_diff(o.apply_d(&xm).unwrap().as_slice(), &(&d * &x)) < 1e-11 * (n * n) as f64);
            assert!(
                max_diff(o.apply_dt(&xm).unwrap().as_slice(), &(d.transpose() * &x))
                    < 1e-11 * (n * n) as f64
            );
        }
    }
}

#[test]
fn factorization_and_antisymmetry_are_structural() {
    for n in [3usize, 8, 17, 64] {
        let a = dense_a(n);
        let j = dense_j(n);
        let d = dense_d(n);
        // A = D D^t entrywise.
        let ddt = &d * d.transpose();
        assert!((&a - &ddt).amax() < 1e-9 * (n * n) as f64);
        // J = (D^t - D)/2 entrywise, and J^t = -J exactly.
        let j2 = (d.transpose() - &d) * 0.5;
        assert_eq!((&j - &j2).amax(), 0.0);
        assert_eq!((j.transpose() + &j).amax(), 0.0);
        // Circulants commute.
        assert!((&a * &j - &j * &a).amax() < 1e-9 * (n * n) as f64);
    }
}

#[test]
fn spectral_inverse_matches_pseudo_inverse() {
    let mut rng = seeded_rng(55);
    for n in [4usize, 9, 32, 128] {
        let o = ops(n);
        let pinv = dense_a_pinv(n);
        for _ in 0..4 {
            let x = random_mean_zero(n, &mut rng);
            let xm = MicroVector::new(x.iter().copied().collect());
            let y = o.solve_a_inv(&xm).unwrap();
            let reference = &pinv * &x;
            assert!(
                rel_l2_err(y.as_slice(), &reference) < 1e-10,
                "n = {n}: spectral inverse deviates from SVD pseudo-inverse"
            );
        }
    }
}

#[test]
fn j_a_inv_matches_dense_composition() {
    let mut rng = seeded_rng(56);
    for n in [3usize, 6, 25, 96] {
        let o = ops(n);
        let composed = dense_j(n) * dense_a_pinv(n);
        for _ in 0..4 {
            let x = random_mean_zero(n, &mut rng);
            let xm = MicroVector::new(x.iter().copied().collect());
            let closed = o.apply_j_a_inv(&xm).unwrap();
            let reference = &composed * &x;
            assert!(
                rel_l2_err(closed.as_slice(), &reference) < 1e-9,
                "n = {n}: cumulative-sum form deviates from dense J A^+"
            );
        }
    }
}

#[test]
fn quad_form_matches_dense_quadratic() {
    let mut rng = seeded_rng(57);
    for n in [5usize, 16, 64] {
        let o = ops(n);
        let pinv = dense_a_pinv(n);
        for _ in 0..4 {
            let x = random_mean_zero(n, &mut rng);
            let xm = MicroVector::new(x.iter().copied().collect());
            let q = o.quad_form_a_inv(&xm).unwrap();
            let reference = x.dot(&(&pinv * &x)) / n as f64;
            assert!((q - reference).abs() <= 1e-12 + 1e-10 * reference.abs());
        }
    }
}

#[test]
fn eigenvalues_match_dense_symmetric_eigen() {
    // Spectrum of dense A vs the closed form 4 n^2 sin^2(pi k / n).
    for n in [6usize, 11, 24] {
        let o = ops(n);
        let a = dense_a(n);
        let mut dense: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        let mut closed: Vec<f64> = (0..n).map(|k| o.spectrum().lap_eigenvalue(k)).collect();
        closed.sort_by(f64::total_cmp);
        for (d, c) in dense.iter().zip(&closed) {
            assert!((d - c).abs() < 1e-8 * (n * n) as f64, "n = {n}: {d} vs {c}");
        }
    }
}
