//! AMSGrad without bias correction, and the step-decay learning-rate schedule.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::PoseKanModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amsgrad {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Amsgrad {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Amsgrad {
    /// One update of a parameter slice and its moments.
    ///
    /// `m ← β₁m + (1-β₁)g`, `v ← β₂v + (1-β₂)g²`, `v̂ ← max(v̂, v)`,
    /// `θ ← θ - lr·m/(√v̂ + ε)`.
    pub fn update(&self, lr: f64, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], v_hat: &mut [f64]) {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            if v[i] > v_hat[i] {
                v_hat[i] = v[i];
            }
            params[i] -= lr * m[i] / (libm::sqrt(v_hat[i]) + self.eps);
        }
    }
}

/// `lr₀ · decay^⌊epoch / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub every: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 0.001, decay: 0.99, every: 4 }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::BadConfig("lr must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::BadConfig("decay must be in (0, 1]".into()));
        }
        if self.every == 0 {
            return Err(Error::BadConfig("decay_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: u64) -> f64 {
        self.initial * powi_rounded(self.decay, epoch / self.every as u64)
    }
}

/// `base^k` rounded once to f64, via double-double exponentiation by squaring.
fn powi_rounded(base: f64, mut k: u64) -> f64 {
    let mul = |(ah, al): (f64, f64), (bh, bl): (f64, f64)| {
        let p = ah * bh;
        let e = libm::fma(ah, bh, -p) + (ah * bl + al * bh);
        let hi = p + e;
        (hi, e - (hi - p))
    };
    let mut acc = (1.0, 0.0);
    let mut sq = (base, 0.0);
    while k > 0 {
        if k & 1 == 1 {
            acc = mul(acc, sq);
        }
        k >>= 1;
        if k > 0 {
            sq = mul(sq, sq);
        }
    }
    acc.0
}

/// Optimizer moments (flat, in parameter declaration order) and counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub optimizer: Amsgrad,
    pub schedule: LrSchedule,
    pub rng_seed: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_hat: Vec<f64>,
}

impl TrainState {
    pub fn new(parameter_count: usize, optimizer: Amsgrad, schedule: LrSchedule, rng_seed: u64) -> Self {
        Self {
            step: 0,
            epoch: 0,
            lr: schedule.lr(0),
            optimizer,
            schedule,
            rng_seed,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            v_hat: vec![0.0; parameter_count],
        }
    }

    /// Applies one AMSGrad step using the gradients held by `model`.
    ///
    /// Every gradient is checked before anything is touched; a non-finite
    /// entry aborts the whole step.
    pub fn amsgrad_step(&mut self, model: &mut PoseKanModel) -> Result<()> {
        if self.m.len() != model.parameter_count() {
            return Err(Error::BadConfig(alloc::format!(
                "optimizer state holds {} moments for {} parameters",
                self.m.len(),
                model.parameter_count()
            )));
        }
        let mut bad: Option<String> = None;
        model.visit_params(&mut |name: &str, _: &mut [f64], g: &mut [f64]| {
            if bad.is_none() && g.iter().any(|x| !x.is_finite()) {
                bad = Some(name.into());
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }
        let (opt, lr) = (self.optimizer, self.lr);
        let mut off = 0;
        let (m, v, v_hat) = (&mut self.m, &mut self.v, &mut self.v_hat);
        model.visit_params(&mut |_: &str, p: &mut [f64], g: &mut [f64]| {
            let n = p.len();
            opt.update(lr, p, g, &mut m[off..off + n], &mut v[off..off + n], &mut v_hat[off..off + n]);
            off += n;
        });
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = [1.0, -2.0, 3.0];
        let (mut m, mut v, mut vh) = ([0.0; 3], [0.0; 3], [0.0; 3]);
        Amsgrad::default().update(0.001, &mut p, &[0.0; 3], &mut m, &mut v, &mut vh);
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn hand_traced_step() {
        let mut p = [1.0];
        let (mut m, mut v, mut vh) = ([0.0], [0.0], [0.0]);
        let opt = Amsgrad::default();
        opt.update(0.001, &mut p, &[1.0], &mut m, &mut v, &mut vh);
        assert!((m[0] - 0.1).abs() < 1e-15);
        assert!((v[0] - 0.001).abs() < 1e-15);
        assert_eq!(vh[0], v[0]);
        assert!((p[0] - 0.996_837_722_6).abs() < 1e-9, "{}", p[0]);
        // a zero gradient decays v but v̂ keeps its maximum
        let peak = vh[0];
        opt.update(0.001, &mut p, &[0.0], &mut m, &mut v, &mut vh);
        assert!(v[0] < peak);
        assert_eq!(vh[0], peak);
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 0.001);
        assert_eq!(s.lr(3), 0.001);
        assert!((s.lr(8) - 0.0009801).abs() < 1e-15);
        assert!(LrSchedule { every: 0, ..s }.validate().is_err());
    }
}
