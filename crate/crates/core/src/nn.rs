//! Layer normalization, exact GELU, graph-adapted global response
//! normalization and inverted dropout, each with a backward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamVisitor;

/// Per-row normalization over the feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub epsilon: f64,
    pub grad_scale: Vec<f64>,
    pub grad_shift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    /// Unit scale, zero shift.
    pub fn new(dim: usize) -> Self {
        Self::with_epsilon(dim, Self::DEFAULT_EPSILON)
    }

    pub fn with_epsilon(dim: usize, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "layernorm epsilon must be positive");
        Self { scale: vec![1.0; dim], shift: vec![0.0; dim], epsilon, grad_scale: vec![0.0; dim], grad_shift: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.dim()
    }

    pub fn forward(&self, h: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let f = self.dim();
        if h.cols() != f {
            return Err(shape_err((h.rows(), f), h.shape()));
        }
        let mut normalized = Matrix::zeros(h.rows(), f);
        let mut out = Matrix::zeros(h.rows(), f);
        let mut inv_std = Vec::with_capacity(h.rows());
        for j in 0..h.rows() {
            let row = h.row(j);
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / f as f64;
            let is = 1.0 / libm::sqrt(var + self.epsilon);
            inv_std.push(is);
            let nrow = normalized.row_mut(j);
            for (n, &x) in nrow.iter_mut().zip(row) {
                *n = (x - mean) * is;
            }
            let orow = out.row_mut(j);
            for c in 0..f {
                orow[c] = self.scale[c] * normalized[(j, c)] + self.shift[c];
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, upstream: &Matrix) -> Result<Matrix> {
        let f = self.dim();
        if upstream.shape() != cache.normalized.shape() {
            return Err(Error::StaleCache(format!(
                "layernorm upstream {}x{} vs cached {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.normalized.rows(),
                cache.normalized.cols()
            )));
        }
        let mut grad = Matrix::zeros(upstream.rows(), f);
        let mut dxhat = vec![0.0; f];
        for j in 0..upstream.rows() {
            let up = upstream.row(j);
            let xhat = cache.normalized.row(j);
            for c in 0..f {
                self.grad_scale[c] += up[c] * xhat[c];
                self.grad_shift[c] += up[c];
                dxhat[c] = up[c] * self.scale[c];
            }
            let mean_d = dxhat.iter().sum::<f64>() / f as f64;
            let mean_dx = dxhat.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / f as f64;
            let is = cache.inv_std[j];
            let grow = grad.row_mut(j);
            for c in 0..f {
                grow[c] = is * (dxhat[c] - mean_d - xhat[c] * mean_dx);
            }
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad_scale.fill(0.0);
        self.grad_shift.fill(0.0);
    }

    pub(crate) fn visit_params(&mut self, prefix: &str, visitor: &mut dyn ParamVisitor) {
        visitor.visit(&format!("{prefix}.scale"), &mut self.scale, &mut self.grad_scale);
        visitor.visit(&format!("{prefix}.shift"), &mut self.shift, &mut self.grad_shift);
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

/// Exact GELU `x·Φ(x)` (no tanh approximation).
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    normal_cdf(x) + x * pdf
}

/// Elementwise GELU; the input is the cache.
pub fn gelu_forward(h: &Matrix) -> Matrix {
    let mut out = h.clone();
    for v in out.as_mut_slice() {
        *v = gelu(*v);
    }
    out
}

pub fn gelu_backward(input: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    upstream.ensure_shape(input.rows(), input.cols())?;
    let mut out = upstream.clone();
    for (g, &x) in out.as_mut_slice().iter_mut().zip(input.as_slice()) {
        *g *= gelu_derivative(x);
    }
    Ok(out)
}

/// Global response normalization over joints:
/// `g_f = ‖H[:, f]‖₂`, `n_f = g_f / (mean(g) + ε)`,
/// `out = γ ⊙ (H ⊙ n) + β + H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grn {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GrnCache {
    input: Matrix,
    norms: Vec<f64>,
    ratio: Vec<f64>,
    denom: f64,
}

impl Grn {
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    /// Zero `γ` and `β`, so the layer starts as the identity.
    pub fn new(dim: usize) -> Self {
        Self::with_epsilon(dim, Self::DEFAULT_EPSILON)
    }

    pub fn with_epsilon(dim: usize, epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "grn epsilon must be positive");
        Self { gamma: vec![0.0; dim], beta: vec![0.0; dim], epsilon, grad_gamma: vec![0.0; dim], grad_beta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.dim()
    }

    pub fn forward(&self, h: &Matrix) -> Result<(Matrix, GrnCache)> {
        let f = self.dim();
        if h.cols() != f {
            return Err(shape_err((h.rows(), f), h.shape()));
        }
        let mut norms = vec![0.0; f];
        for j in 0..h.rows() {
            for (n, &x) in norms.iter_mut().zip(h.row(j)) {
                *n += x * x;
            }
        }
        for n in &mut norms {
            *n = libm::sqrt(*n);
        }
        let denom = norms.iter().sum::<f64>() / f as f64 + self.epsilon;
        let ratio: Vec<f64> = norms.iter().map(|g| g / denom).collect();
        let mut out = h.clone();
        for j in 0..h.rows() {
            let row = out.row_mut(j);
            for c in 0..f {
                let x = row[c];
                row[c] = self.gamma[c] * x * ratio[c] + self.beta[c] + x;
            }
        }
        Ok((out, GrnCache { input: h.clone(), norms, ratio, denom }))
    }

    pub fn backward(&mut self, cache: &GrnCache, upstream: &Matrix) -> Result<Matrix> {
        let f = self.dim();
        let h = &cache.input;
        if upstream.shape() != h.shape() {
            return Err(Error::StaleCache(format!(
                "grn upstream {}x{} vs cached {}x{}",
                upstream.rows(),
                upstream.cols(),
                h.rows(),
                h.cols()
            )));
        }
        let mut grad = Matrix::zeros(h.rows(), f);
        let mut d_ratio = vec![0.0; f];
        for j in 0..h.rows() {
            let up = upstream.row(j);
            let x = h.row(j);
            let grow = grad.row_mut(j);
            for c in 0..f {
                self.grad_gamma[c] += up[c] * x[c] * cache.ratio[c];
                self.grad_beta[c] += up[c];
                d_ratio[c] += up[c] * self.gamma[c] * x[c];
                grow[c] = up[c] * (1.0 + self.gamma[c] * cache.ratio[c]);
            }
        }
        // n_f = g_f / D with D = mean(g) + ε, so ∂n_f/∂g_m = δ_fm / D - g_f / (F·D²).
        let coupling = d_ratio.iter().zip(&cache.norms).map(|(d, g)| d * g).sum::<f64>() / (f as f64 * cache.denom * cache.denom);
        let d_norm: Vec<f64> = d_ratio.iter().map(|d| d / cache.denom - coupling).collect();
        for j in 0..h.rows() {
            let x = h.row(j);
            let grow = grad.row_mut(j);
            for c in 0..f {
                if cache.norms[c] > 0.0 {
                    grow[c] += d_norm[c] * x[c] / cache.norms[c];
                }
            }
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.fill(0.0);
        self.grad_beta.fill(0.0);
    }

    pub(crate) fn visit_params(&mut self, prefix: &str, visitor: &mut dyn ParamVisitor) {
        visitor.visit(&format!("{prefix}.gamma"), &mut self.gamma, &mut self.grad_gamma);
        visitor.visit(&format!("{prefix}.beta"), &mut self.beta, &mut self.grad_beta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Survivor scale factors: 0 for dropped entries, `1/(1-rate)` otherwise.
/// `None` means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn factors(&self) -> Option<&[f64]> {
        self.0.as_deref()
    }

    pub fn backward(&self, upstream: &Matrix) -> Matrix {
        let mut out = upstream.clone();
        if let Some(m) = &self.0 {
            for (g, f) in out.as_mut_slice().iter_mut().zip(m) {
                *g *= f;
            }
        }
        out
    }
}

/// Inverted dropout. Eval mode and `rate == 0` return `h` unchanged.
pub fn dropout_forward<R: Rng + ?Sized>(h: &Matrix, rate: f64, mode: Mode, rng: &mut R) -> Result<(Matrix, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::BadConfig(format!("dropout rate {rate} must be in [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((h.clone(), DropoutMask::identity()));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..h.as_slice().len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    let mut out = h.clone();
    for (x, m) in out.as_mut_slice().iter_mut().zip(&mask) {
        *x *= m;
    }
    Ok((out, DropoutMask(Some(mask))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let ln = LayerNorm::new(4);
        let (y, _) = ln.forward(&Matrix::filled(2, 4, 3.5)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_pair() {
        let ln = LayerNorm::with_epsilon(2, 1e-300);
        let (y, _) = ln.forward(&Matrix::from_rows(&[[1.0, -1.0]])).unwrap();
        assert!((y[(0, 0)] - 1.0).abs() < 1e-15 && (y[(0, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let ln = LayerNorm::new(7);
        // spread keeps var/(var + eps) within 1e-6 of one
        let mut h = sample(5, 7, 1);
        h.scale(20.0);
        let (y, _) = ln.forward(&h).unwrap();
        for j in 0..5 {
            let mean = y.row(j).iter().sum::<f64>() / 7.0;
            let var = y.row(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 7.0;
            assert!(mean.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-6, "var {var}");
        }
        assert!(ln.forward(&Matrix::zeros(2, 6)).is_err());
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        assert!((gelu(-1.0) - (-0.15865525393145705)).abs() < 1e-15);
        assert!((gelu(-1.0) - (-0.158655)).abs() < 1e-6);
    }

    #[test]
    fn grn_identity_when_params_zero() {
        let grn = Grn::new(6);
        let h = sample(4, 6, 2);
        let (y, _) = grn.forward(&h).unwrap();
        assert_eq!(y, h);
    }

    #[test]
    fn grn_equal_norm_columns() {
        let mut grn = Grn::new(3);
        grn.gamma = vec![0.5, -1.0, 2.0];
        grn.beta = vec![0.1, 0.2, 0.3];
        // every column has unit L2 norm over joints
        let h = Matrix::from_rows(&[[0.6, 0.0, 1.0], [0.8, 1.0, 0.0]]);
        let (y, _) = grn.forward(&h).unwrap();
        for j in 0..2 {
            for c in 0..3 {
                let expected = (1.0 + grn.gamma[c]) * h[(j, c)] + grn.beta[c];
                assert!((y[(j, c)] - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn grn_zero_input() {
        let mut grn = Grn::new(3);
        grn.gamma = vec![1.0, 1.0, 1.0];
        let (y, _) = grn.forward(&Matrix::zeros(4, 3)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_identity_modes() {
        let h = sample(3, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout_forward(&h, 0.5, Mode::Eval, &mut rng).unwrap().0, h);
        assert_eq!(dropout_forward(&h, 0.0, Mode::Train, &mut rng).unwrap().0, h);
        assert!(dropout_forward(&h, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let h = Matrix::filled(1000, 1000, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (y, mask) = dropout_forward(&h, 0.2, Mode::Train, &mut rng).unwrap();
        let survivors = mask.factors().unwrap().iter().filter(|&&m| m > 0.0).count();
        let frac = survivors as f64 / 1e6;
        assert!((frac - 0.8).abs() < 0.002, "{frac}");
        let mean = y.as_slice().iter().sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn dropout_mask_reproducible() {
        let h = sample(4, 4, 5);
        let a = dropout_forward(&h, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout_forward(&h, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
