//! Elastic-net style regression loss mixing squared and absolute joint errors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `(1-α)·mean‖y-ŷ‖₂² + α·mean‖y-ŷ‖₁`, with means taken over joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticLoss {
    alpha: f64,
}

impl ElasticLoss {
    pub const DEFAULT_ALPHA: f64 = 0.03;

    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::BadConfig(alloc::format!("alpha {alpha} must be in [0, 1]")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Loss and subgradient w.r.t. `y_hat` over flat `N·J·3` buffers.
    pub fn evaluate(&self, y: &[f64], y_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_shapes(y, y_hat)?;
        let mut grad = vec![0.0; y.len()];
        let joints = y.len() / 3;
        let loss = self.accumulate(y, y_hat, joints, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds this slice's share of a loss normalized by `total_joints` and
    /// writes its gradient into `grad`. Used to split a batch across samples.
    pub fn accumulate(&self, y: &[f64], y_hat: &[f64], total_joints: usize, grad: &mut [f64]) -> Result<f64> {
        check_shapes(y, y_hat)?;
        if grad.len() != y.len() {
            return Err(Error::ShapeMismatch { expected: alloc::format!("{}", y.len()), actual: alloc::format!("{}", grad.len()) });
        }
        if total_joints == 0 {
            return Ok(0.0);
        }
        let inv = 1.0 / total_joints as f64;
        let mut sq = 0.0;
        let mut abs = 0.0;
        for ((t, p), g) in y.iter().zip(y_hat).zip(grad.iter_mut()) {
            let d = p - t;
            sq += d * d;
            abs += libm::fabs(d);
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g = ((1.0 - self.alpha) * 2.0 * d + self.alpha * sign) * inv;
        }
        Ok(((1.0 - self.alpha) * sq + self.alpha * abs) * inv)
    }
}

fn check_shapes(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() || !y.len().is_multiple_of(3) {
        return Err(Error::ShapeMismatch {
            expected: alloc::format!("{} (multiple of 3)", y.len()),
            actual: alloc::format!("{}", y_hat.len()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_target() {
        let y = [1.0, -2.0, 3.0, 0.5, 0.0, 7.0];
        let (l, g) = ElasticLoss::new(0.03).unwrap().evaluate(&y, &y).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn endpoints_and_hand_example() {
        let y = [0.0, 0.0, 0.0];
        let yh = [1.0, 0.0, 0.0];
        assert_eq!(ElasticLoss::new(0.03).unwrap().evaluate(&y, &yh).unwrap().0, 1.0);
        let y = [0.0; 6];
        let yh = [1.0, -2.0, 0.0, 0.0, 3.0, 0.0];
        // squared norms 5 and 9, L1 norms 3 and 3, over 2 joints
        assert_eq!(ElasticLoss::new(0.0).unwrap().evaluate(&y, &yh).unwrap().0, 7.0);
        assert_eq!(ElasticLoss::new(1.0).unwrap().evaluate(&y, &yh).unwrap().0, 3.0);
    }

    #[test]
    fn errors() {
        assert!(ElasticLoss::new(1.5).is_err());
        let l = ElasticLoss::new(0.5).unwrap();
        assert!(l.evaluate(&[0.0; 3], &[0.0; 6]).is_err());
        assert!(l.evaluate(&[0.0; 4], &[0.0; 4]).is_err());
    }
}
