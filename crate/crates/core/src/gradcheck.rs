//! Central finite-difference checking of hand-written backward passes.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// An operation whose inputs and parameters are exposed as one flat point.
pub trait GradCheckable {
    fn point(&self) -> Vec<f64>;
    fn set_point(&mut self, x: &[f64]);
    fn output(&mut self) -> Result<Vec<f64>>;
    /// Analytic gradient of `upstream · output` with respect to the point.
    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>>;
}

/// Absolute differences at or below this always pass: the relative error
/// denominator never drops below `ABSOLUTE_FLOOR / tol_rel`.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic gradient with central differences of step `h` on
/// every coordinate. The output is scalarized against a fixed random
/// projection drawn from `seed`.
pub fn grad_check(op: &mut dyn GradCheckable, h: f64, tol_rel: f64, seed: u64) -> Result<GradCheckReport> {
    let x0 = op.point();
    let out_len = op.output()?.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let analytic = op.gradient(&projection)?;
    assert_eq!(analytic.len(), x0.len(), "gradient length must match the point");

    let scalar = |op: &mut dyn GradCheckable, x: &[f64]| -> Result<f64> {
        op.set_point(x);
        let y = op.output()?;
        Ok(y.iter().zip(&projection).map(|(a, b)| a * b).sum())
    };

    let mut x = x0.clone();
    let mut max_rel_error: f64 = 0.0;
    let mut worst_coordinate = None;
    for i in 0..x0.len() {
        x[i] = x0[i] + h;
        let up = scalar(op, &x)?;
        x[i] = x0[i] - h;
        let down = scalar(op, &x)?;
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * h);
        let diff = libm::fabs(numeric - analytic[i]);
        let rel = diff / libm::fabs(numeric).max(libm::fabs(analytic[i])).max(ABSOLUTE_FLOOR / tol_rel);
        if rel > max_rel_error || (rel.is_nan() && worst_coordinate.is_none()) {
            max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            worst_coordinate = Some(i);
        }
    }
    op.set_point(&x0);
    Ok(GradCheckReport { coordinates: x0.len(), max_rel_error, worst_coordinate, tolerance: tol_rel, passed: max_rel_error <= tol_rel })
}
