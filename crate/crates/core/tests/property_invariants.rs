//! Property tests of the structural invariants.

use proptest::prelude::*;
use twoscale::coarse_grain::{BlockScheme, CoarseGrain, MacroVector};
use twoscale::metrics::{h_minus1_sq, StepFunction};
use twoscale::operators::{LatticeDim, LatticeOps, MicroVector};

#[allow(dead_code)]
fn micro_vector(n: usize) -> impl Strategy<Value = MicroVector> {
    prop::collection::vec(-10.0f64..10.0, n).prop_map(MicroVector::new)
}

#[allow(dead_code)]
fn mean_zero_micro(n: usize) -> impl Strategy<Value = MicroVector> {
    micro_vector(n).prop_map(|x| {
        let m = x.mean();
        MicroVector::new(x.as_slice().iter().map(|v| v - m).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_sums_vanish_and_j_is_skew(n in 3usize..40, seedvals in prop::collection::vec(-10.0f64..10.0, 40)) {
        let ops = LatticeOps::new(LatticeDim::new(n).unwrap());
        let x = MicroVector::new(seedvals[..n].to_vec());
        let sup = x.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-12 * (n * n) as f64 * sup.max(1.0);
        let ax = ops.apply_a(&x).unwrap();
        let jx = ops.apply_j(&x).unwrap();
        prop_assert!(ax.as_slice().iter().sum::<f64>().abs() <= tol);
        prop_assert!(jx.as_slice().iter().sum::<f64>().abs() <= tol);
        // <Jx, x> = 0 and <Ax, x> = |D^t x|^2 >= 0.
        prop_assert!(jx.dot(&x).abs() <= tol * sup.max(1.0) * n as f64);
        let dtx = ops.apply_dt(&x).unwrap();
        let quad = ax.dot(&x);
        prop_assert!((quad - dtx.dot(&dtx)).abs() <= 1e-9 * quad.abs().max(1.0));
        prop_assert!(quad >= -tol);
        // Assumption (ix) with c = 1: |Jx|^2 <= <Ax, x>.
        prop_assert!(jx.dot(&jx) <= quad * (1.0 + 1e-12) + tol);
        // Assumption (x): A and J commute.
        let aj = ops.apply_a(&jx).unwrap();
        let ja = ops.apply_j(&ax).unwrap();
        for i in 0..n {
            prop_assert!((aj.as_slice()[i] - ja.as_slice()[i]).abs() <= 1e-9 * (n * n) as f64 * sup.max(1.0));
        }
    }

    #[test]
    fn solver_is_two_sided_inverse(n in 3usize..48, vals in prop::collection::vec(-5.0f64..5.0, 48)) {
        let ops = LatticeOps::new(LatticeDim::new(n).unwrap());
        let raw = MicroVector::new(vals[..n].to_vec());
        let m = raw.mean();
        let x = MicroVector::new(raw.as_slice().iter().map(|v| v - m).collect());
        prop_assume!(x.norm() > 1e-6);
        let y = ops.solve_a_inv(&x).unwrap();
        let back = ops.apply_a(&y).unwrap();
        let mut err = 0.0;
        for i in 0..n {
            err += (back.as_slice()[i] - x.as_slice()[i]).powi(2);
        }
        prop_assert!(err.sqrt() / x.norm() <= 1e-10);
        // Other side: A then solve.
        let ax = ops.apply_a(&x).unwrap();
        let there = ops.solve_a_inv(&ax).unwrap();
        let mut err2 = 0.0;
        for i in 0..n {
            err2 += (there.as_slice()[i] - x.as_slice()[i]).powi(2);
        }
        prop_assert!(err2.sqrt() / x.norm() <= 1e-10);
    }

    #[test]
    fn projector_round_trip_and_pythagoras(
        m in 3usize..12,
        k in 1usize..6,
        vals in prop::collection::vec(-5.0f64..5.0, 72),
    ) {
        let n = m * k;
        let cg = CoarseGrain::new(BlockScheme::new(n, m).unwrap()).unwrap();
        let y = MacroVector::new(vals[..m].to_vec());
        // N P P^t = id bitwise.
        let back = cg.project_p(&cg.lift_npt(&y).unwrap()).unwrap();
        prop_assert_eq!(back.as_slice(), y.as_slice());

        let x = MicroVector::new(vals[..n].to_vec());
        let lifted = cg.lift_npt(&cg.project_p(&x).unwrap()).unwrap();
        let fluct = cg.fluctuation(&x).unwrap();
        let total = x.dot(&x);
        let parts = lifted.dot(&lifted) + fluct.dot(&fluct);
        prop_assert!((total - parts).abs() <= 1e-11 * total.max(1.0));
    }

    #[test]
    fn h_minus1_scales_quadratically(scale in 0.1f64..10.0, vals in prop::collection::vec(-3.0f64..3.0, 32)) {
        let mean = vals.iter().sum::<f64>() / 32.0;
        let w = StepFunction::new(vals.iter().map(|v| v - mean).collect());
        let base = h_minus1_sq(&w).unwrap();
        let scaled = StepFunction::new(w.as_slice().iter().map(|v| scale * v).collect());
        let got = h_minus1_sq(&scaled).unwrap();
        prop_assert!((got - scale * scale * base).abs() <= 1e-10 * (scale * scale * base).max(1e-12));
    }

    #[test]
    fn h_minus1_triangle_inequality(
        a_vals in prop::collection::vec(-3.0f64..3.0, 24),
        b_vals in prop::collection::vec(-3.0f64..3.0, 24),
    ) {
        let center = |v: &[f64]| -> StepFunction {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            StepFunction::new(v.iter().map(|x| x - m).collect())
        };
        let a = center(&a_vals);
        let b = center(&b_vals);
        let sum = StepFunction::new(
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect(),
        );
        let na = h_minus1_sq(&a).unwrap().sqrt();
        let nb = h_minus1_sq(&b).unwrap().sqrt();
        let ns = h_minus1_sq(&sum).unwrap().sqrt();
        prop_assert!(ns <= na + nb + 1e-12);
    }

    #[test]
    fn cumsum_operator_quadratic_form_vanishes(
        m in 4usize..16,
        vals in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        let cg = CoarseGrain::new(BlockScheme::new(2 * m, m).unwrap()).unwrap();
        let mean = vals[..m].iter().sum::<f64>() / m as f64;
        let xi = MacroVector::new(vals[..m].iter().map(|v| v - mean).collect());
        let img = cg.apply_p_a_inv_j_npt(&xi).unwrap();
        let quad: f64 = img.as_slice().iter().zip(xi.as_slice()).map(|(a, b)| a * b).sum();
        let scale: f64 = xi.as_slice().iter().map(|v| v * v).sum::<f64>();
        prop_assert!(quad.abs() <= 1e-12 * scale.max(1e-12));
    }
}
