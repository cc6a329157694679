use posekan_core::gradcheck::grad_check;
use posekan_core::kan::KanLayer;
use posekan_core::nn::{dropout_forward, gelu, Grn, LayerNorm, Mode};
use posekan_core::spline::SplineGrid;
use posekan_core::verify::{gradient_op, KanCheck, Perturbed, GRADIENT_OPS, GRAD_STEP, GRAD_TOL};
use posekan_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, span: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-span..span)).collect())
}

#[test]
fn spline_partition_support_and_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for g in [3, 5, 8] {
        for k in [1, 2, 3] {
            let grid = SplineGrid::new(g, k, -1.0, 1.0).unwrap();
            for _ in 0..1000 {
                let b = grid.basis(rng.random_range(-1.0..1.0)).unwrap();
                assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                assert!(b.iter().all(|&v| v >= 0.0));
                assert!(b.iter().filter(|&&v| v != 0.0).count() <= k + 1);
            }
        }
    }
}

#[test]
fn kan_gradients_on_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let (din, dout) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (g, k) = (rng.random_range(1..=5), rng.random_range(0..=3));
        let grid = SplineGrid::new(g, k, -1.0, 1.0).unwrap();
        let mut layer = KanLayer::init(din, dout, grid, rng.random()).unwrap();
        layer.spline_weight_mut().iter_mut().for_each(|w| *w = rng.random_range(0.5..1.5));
        let rows = rng.random_range(1..=4);
        // Keep inputs away from knots, where low-order bases have kinks; some
        // fall outside the extended grid to exercise the silu-only branch.
        let step = 2.0 / g as f64;
        let input: Vec<f64> = (0..rows * din)
            .map(|_| {
                let cell = rng.random_range(-(k as i64) - 2..(g + k) as i64 + 2) as f64;
                -1.0 + (cell + rng.random_range(0.1..0.9)) * step
            })
            .collect();
        let mut op = KanCheck { layer, input: Matrix::from_vec(rows, din, input) };
        let report = grad_check(&mut op, GRAD_STEP, GRAD_TOL, case).unwrap();
        assert!(report.passed, "case {case} (in {din}, out {dout}, G {g}, k {k}): {report:?}");
    }
}

#[test]
fn every_registered_op_passes_and_a_perturbed_copy_fails() {
    for (i, name) in GRADIENT_OPS.iter().enumerate() {
        let mut op = gradient_op(name, 77 + i as u64).unwrap();
        let report = grad_check(&mut op, GRAD_STEP, GRAD_TOL, 5).unwrap();
        assert!(report.passed, "{name}: {report:?}");
        let mut broken = Perturbed { inner: gradient_op(name, 77 + i as u64).unwrap(), factor: 1.01 };
        assert!(!grad_check(&mut broken, GRAD_STEP, GRAD_TOL, 5).unwrap().passed, "{name} perturbation missed");
    }
}

#[test]
fn kan_output_is_linear_in_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut layer = KanLayer::init(4, 5, SplineGrid::new(5, 3, -1.0, 1.0).unwrap(), 8).unwrap();
    layer.base_weight_mut().fill(0.0);
    let h = random_matrix(6, 4, 1.0, &mut rng);
    let (y1, _) = layer.forward(&h).unwrap();
    layer.spline_coeffs_mut().iter_mut().for_each(|c| *c *= 2.0);
    let (y2, _) = layer.forward(&h).unwrap();
    let mut doubled = y1.clone();
    doubled.scale(2.0);
    assert!(y2.max_abs_diff(&doubled) <= 1e-12);
}

proptest! {
    #[test]
    fn layernorm_rows_are_standardized(seed in any::<u64>(), rows in 1usize..5, dim in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_matrix(rows, dim, 20.0, &mut rng);
        let (y, _) = LayerNorm::new(dim).forward(&h).unwrap();
        for r in 0..rows {
            let row = y.row(r);
            // ε = 1e-5 shifts the variance by ≈ ε/σ², so the bound needs σ² ≥ 10.
            let raw_mean = h.row(r).iter().sum::<f64>() / dim as f64;
            let raw_var = h.row(r).iter().map(|v| (v - raw_mean).powi(2)).sum::<f64>() / dim as f64;
            prop_assume!(raw_var >= 10.0);
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
            prop_assert!(mean.abs() <= 1e-12);
            prop_assert!((var - 1.0).abs() <= 1e-6, "var {}", var);
        }
    }

    #[test]
    fn gelu_bounded_by_identity(x in -50.0f64..50.0) {
        prop_assert!(gelu(x).abs() <= x.abs());
    }

    #[test]
    fn gelu_monotone_on_nonnegative(a in 0.0f64..20.0, d in 0.0f64..5.0) {
        prop_assert!(gelu(a + d) >= gelu(a));
    }

    #[test]
    fn grn_at_zero_is_identity(seed in any::<u64>(), rows in 1usize..6, dim in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_matrix(rows, dim, 3.0, &mut rng);
        let (y, _) = Grn::new(dim).forward(&h).unwrap();
        prop_assert_eq!(y, h);
    }

    #[test]
    fn dropout_masks_reproducible(seed in any::<u64>(), rate in 0.0f64..0.9) {
        let h = Matrix::filled(4, 7, 1.0);
        let a = dropout_forward(&h, rate, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = dropout_forward(&h, rate, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.0, b.0);
    }
}
