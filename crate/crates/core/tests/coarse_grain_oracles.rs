//! Dense-oracle cross-checks of the coarse-graining layer and the
//! macroscopic ODE right-hand side.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use twoscale::coarse_grain::{BlockScheme, CoarseGrain, MacroVector};
use twoscale::macro_pde::{integrate_macro, macro_rhs};
use twoscale::thermo::{GridSpec, Potential, PsiKTable};

#[test]
fn macro_a_inv_matches_dense_composition() {
    let mut rng = seeded_rng(201);
    for (n, m) in [(8usize, 4usize), (24, 8), (48, 12), (60, 5)] {
        let cg = CoarseGrain::new(BlockScheme::new(n, m).unwrap()).unwrap();
        let dense = dense_abar_inv(n, m);
        for _ in 0..6 {
            let y = random_mean_zero(m, &mut rng);
            let ym = MacroVector::new(y.iter().copied().collect());
            let got = cg.macro_a_inv(&ym).unwrap();
            let reference = &dense * &y;
            assert!(
                rel_l2_err(got.as_slice(), &reference) < 1e-10,
                "({n}, {m}): Abar^-1 deviates from dense composition"
            );
        }
    }
}

#[test]
fn macro_a_inverts_the_dense_composition() {
    let mut rng = seeded_rng(202);
    let (n, m) = (32usize, 8usize);
    let cg = CoarseGrain::new(BlockScheme::new(n, m).unwrap()).unwrap();
    let dense = dense_abar_inv(n, m);
    for _ in 0..6 {
        let y = random_mean_zero(m, &mut rng);
        let ym = MacroVector::new(y.iter().copied().collect());
        let z = cg.macro_a(&ym).unwrap();
        // Dense route: Abar^{-1} z should reproduce y.
        let back = &dense * DVector::from_column_slice(z.as_slice());
        assert!(rel_l2_err(y.as_slice().iter().as_slice(), &back) < 1e-9);
    }
}

#[test]
fn cumsum_operator_matches_dense_composition_batch() {
    let mut rng = seeded_rng(203);
    for (m, k) in [(4usize, 2usize), (16, 2), (16, 5), (64, 2)] {
        let n = m * k;
        let cg = CoarseGrain::new(BlockScheme::new(n, m).unwrap()).unwrap();
        let dense = dense_p_a_inv_j_npt(n, m);
        for _ in 0..32 {
            let xi = random_mean_zero(m, &mut rng);
            let xim = MacroVector::new(xi.iter().copied().collect());
            let got = cg.apply_p_a_inv_j_npt(&xim).unwrap();
            let reference = &dense * &xi;
            assert!(
                rel_l2_err(got.as_slice(), &reference) < 1e-10,
                "(m = {m}, k = {k}): closed form deviates from dense composition"
            );
        }
    }
}

#[test]
fn closed_form_is_block_size_independent() {
    // The same xi through schemes with different k gives identical output.
    let mut rng = seeded_rng(204);
    let m = 8;
    let xi = random_mean_zero(m, &mut rng);
    let xim = MacroVector::new(xi.iter().copied().collect());
    let mut outputs = Vec::new();
    for k in [1usize, 2, 4, 8] {
        let cg = CoarseGrain::new(BlockScheme::new(m * k, m).unwrap()).unwrap();
        outputs.push(cg.apply_p_a_inv_j_npt(&xim).unwrap());
    }
    for o in &outputs[1..] {
        for (a, b) in o.as_slice().iter().zip(outputs[0].as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn gaussian_macro_ode_matches_dense_rk4() {
    // Independent oracle: integrate dz/dt = -Abar (I + Q) z densely with
    // tiny RK4 steps, where Abar and Q are built from dense compositions and
    // psi_K' is the identity (Gaussian case).
    let (n, m) = (32usize, 8usize);
    let cg = CoarseGrain::new(BlockScheme::new(n, m).unwrap()).unwrap();
    let pot = Potential::gaussian();
    let table = PsiKTable::build(&pot, n / m, GridSpec::default()).unwrap();

    let abar_inv = dense_abar_inv(n, m);
    let q_dense = dense_p_a_inv_j_npt(n, m);
    // Projector onto mean-zero coordinates.
    let proj = DMatrix::from_fn(m, m, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) - 1.0 / m as f64
    });
    let abar = (&proj * abar_inv * &proj)
        .pseudo_inverse(1e-12)
        .expect("dense Abar");
    let gen = -(&abar * (&proj + &q_dense) * &proj);

    let eta0: Vec<f64> = (0..m)
        .map(|j| 0.5 * (2.0 * std::f64::consts::PI * j as f64 / m as f64).cos())
        .collect();
    let t_end = 0.01;

    // Dense RK4 at a step far below the production tolerance.
    let mut z = DVector::from_column_slice(&eta0);
    let steps = 20_000usize;
    let h = t_end / steps as f64;
    for _ in 0..steps {
        let k1 = &gen * &z;
        let k2 = &gen * (&z + &k1 * (0.5 * h));
        let k3 = &gen * (&z + &k2 * (0.5 * h));
        let k4 = &gen * (&z + &k3 * h);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }

    let traj = integrate_macro(
        &cg,
        &table,
        &MacroVector::new(eta0),
        t_end,
        &[t_end],
        1e-10,
    )
    .unwrap();
    let got = traj.profiles.last().unwrap();
    // The production path uses tabulated psi_K' (=m up to 1e-8-level table
    // error), so agreement is limited by the table, not the integrator.
    assert!(
        rel_l2_err(got.as_slice(), &z) < 1e-6,
        "macro ODE deviates from dense RK4 oracle: {:?} vs {:?}",
        got.as_slice(),
        z.as_slice()
    );
}

#[test]
fn gaussian_macro_mode_decays_like_dense_pencil() {
    // Rayleigh-quotient decay of a near-eigenmode against the dense
    // generator's action.
    let (n, m) = (64usize, 16usize);
    let cg = CoarseGrain::new(BlockScheme::new(n, m).unwrap()).unwrap();
    let pot = Potential::gaussian();
    let table = PsiKTable::build(&pot, n / m, GridSpec::default()).unwrap();
    let eta = MacroVector::new(
        (0..m)
            .map(|j| (2.0 * std::f64::consts::PI * j as f64 / m as f64).cos())
            .collect(),
    );
    let rhs = macro_rhs(&cg, &eta, &table).unwrap();

    let abar_inv = dense_abar_inv(n, m);
    let q_dense = dense_p_a_inv_j_npt(n, m);
    let proj = DMatrix::from_fn(m, m, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) - 1.0 / m as f64
    });
    let abar = (&proj * abar_inv * &proj)
        .pseudo_inverse(1e-12)
        .expect("dense Abar");
    let gen = -(&abar * (&proj + &q_dense) * &proj);
    let reference = &gen * DVector::from_column_slice(eta.as_slice());
    assert!(
        rel_l2_err(rhs.as_slice(), &reference) < 1e-6,
        "macro rhs deviates from dense pencil action"
    );
}

#[test]
fn gamma_is_uniformly_bounded_across_sizes() {
    // The fluctuation constant of |(id - N P^t P)x|^2 <= gamma M^{-2} <x, Ax>
    // stays order one over the tested schemes.
    let mut gammas = Vec::new();
    for (n, m) in [(32usize, 8usize), (64, 8), (128, 16), (256, 16)] {
        let cg = CoarseGrain::new(BlockScheme::new(n, m).unwrap()).unwrap();
        let g = cg.measure_gamma_exact().unwrap();
        assert!(g > 0.0 && g < 1.0, "(n, m) = ({n}, {m}): gamma = {g}");
        gammas.push(g);
    }
    let lo = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gammas.iter().cloned().fold(0.0f64, f64::max);
    assert!(hi / lo < 2.0, "gamma not uniform across sizes: {gammas:?}");
}
