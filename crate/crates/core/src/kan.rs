//! Kolmogorov-Arnold layers: a matrix of learnable univariate edge functions
//! `φ(x) = w_b·silu(x) + w_s·Σ c_i B_i(x)`, shared across joints.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamVisitor;
use crate::spline::SplineGrid;

/// `x / (1 + e^{-x})`, evaluated without overflow for large `|x|`.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    in_dim: usize,
    out_dim: usize,
    grid: SplineGrid,
    /// `[in][basis][out]`, row-major, so inner loops run over outputs.
    spline_coeffs: Vec<f64>,
    /// `[in][out]`.
    base_weight: Vec<f64>,
    /// `[in][out]`.
    spline_weight: Vec<f64>,
    grad_spline_coeffs: Vec<f64>,
    grad_base_weight: Vec<f64>,
    grad_spline_weight: Vec<f64>,
}

/// Per-input quantities saved by [`KanLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct KanCache {
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    stride: usize,
    silu: Vec<f64>,
    silu_grad: Vec<f64>,
    start: Vec<u32>,
    count: Vec<u32>,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl KanLayer {
    /// Layer with zero parameters.
    pub fn zeros(in_dim: usize, out_dim: usize, grid: SplineGrid) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::BadDimensions(format!("kan layer {in_dim}->{out_dim}")));
        }
        let nb = grid.basis_count();
        let edges = in_dim * out_dim;
        Ok(Self {
            in_dim,
            out_dim,
            grid,
            spline_coeffs: vec![0.0; edges * nb],
            base_weight: vec![0.0; edges],
            spline_weight: vec![0.0; edges],
            grad_spline_coeffs: vec![0.0; edges * nb],
            grad_base_weight: vec![0.0; edges],
            grad_spline_weight: vec![0.0; edges],
        })
    }

    /// Seeded initialization: base weights uniform in `±sqrt(6/(in+out))`,
    /// spline weights 1, coefficients `N(0, (0.1/sqrt(G+k))²)`.
    pub fn init(in_dim: usize, out_dim: usize, grid: SplineGrid, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(in_dim, out_dim, grid, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, grid: SplineGrid, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim, grid)?;
        let bound = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        for w in &mut layer.base_weight {
            *w = rng.random_range(-bound..bound);
        }
        layer.spline_weight.fill(1.0);
        let std = 0.1 / libm::sqrt(layer.grid.basis_count() as f64);
        let normal = Normal::new(0.0, std).expect("positive standard deviation");
        for c in &mut layer.spline_coeffs {
            *c = normal.sample(rng);
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn parameter_count(&self) -> usize {
        self.in_dim * self.out_dim * (self.grid.basis_count() + 2)
    }

    pub fn spline_coeffs(&self) -> &[f64] {
        &self.spline_coeffs
    }

    pub fn spline_coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.spline_coeffs
    }

    pub fn base_weight(&self) -> &[f64] {
        &self.base_weight
    }

    pub fn base_weight_mut(&mut self) -> &mut [f64] {
        &mut self.base_weight
    }

    pub fn spline_weight(&self) -> &[f64] {
        &self.spline_weight
    }

    pub fn spline_weight_mut(&mut self) -> &mut [f64] {
        &mut self.spline_weight
    }

    pub fn grad_spline_coeffs(&self) -> &[f64] {
        &self.grad_spline_coeffs
    }

    pub fn grad_base_weight(&self) -> &[f64] {
        &self.grad_base_weight
    }

    pub fn grad_spline_weight(&self) -> &[f64] {
        &self.grad_spline_weight
    }

    /// Storage index of the weights of edge `(q, p)` (input `p` to output `q`).
    pub fn edge_index(&self, q: usize, p: usize) -> usize {
        p * self.out_dim + q
    }

    /// Storage index of coefficient `b` of edge `(q, p)`.
    pub fn coeff_index(&self, q: usize, p: usize, b: usize) -> usize {
        (p * self.grid.basis_count() + b) * self.out_dim + q
    }

    pub fn set_edge_coeffs(&mut self, q: usize, p: usize, values: &[f64]) {
        assert_eq!(values.len(), self.grid.basis_count());
        for (b, &v) in values.iter().enumerate() {
            let i = self.coeff_index(q, p, b);
            self.spline_coeffs[i] = v;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_spline_coeffs.fill(0.0);
        self.grad_base_weight.fill(0.0);
        self.grad_spline_weight.fill(0.0);
    }

    /// `φ_{q,p}(x)` for one edge.
    pub fn edge_activation(&self, q: usize, p: usize, x: f64) -> Result<f64> {
        if q >= self.out_dim {
            return Err(Error::IndexOutOfRange { index: q, limit: self.out_dim });
        }
        if p >= self.in_dim {
            return Err(Error::IndexOutOfRange { index: p, limit: self.in_dim });
        }
        let e = self.edge_index(q, p);
        let basis = self.grid.local_basis(x)?;
        let spline: f64 = (0..basis.count).map(|t| self.spline_coeffs[self.coeff_index(q, p, basis.start + t)] * basis.values[t]).sum();
        Ok(self.base_weight[e] * silu(x) + self.spline_weight[e] * spline)
    }

    /// Applies the layer to every row of `h` (one row per joint).
    pub fn forward(&self, h: &Matrix) -> Result<(Matrix, KanCache)> {
        if h.cols() != self.in_dim {
            return Err(shape_err((h.rows(), self.in_dim), h.shape()));
        }
        let rows = h.rows();
        let stride = self.grid.order() + 1;
        let nb = self.grid.basis_count();
        let n_in = rows * self.in_dim;
        let mut cache = KanCache {
            rows,
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            stride,
            silu: vec![0.0; n_in],
            silu_grad: vec![0.0; n_in],
            start: vec![0; n_in],
            count: vec![0; n_in],
            values: vec![0.0; n_in * stride],
            derivs: vec![0.0; n_in * stride],
        };
        for (idx, &x) in h.as_slice().iter().enumerate() {
            let span = idx * stride..(idx + 1) * stride;
            let (start, count) = self.grid.local_basis_into(x, &mut cache.values[span.clone()], &mut cache.derivs[span])?;
            let s = sigmoid(x);
            cache.silu[idx] = x * s;
            cache.silu_grad[idx] = s * (1.0 + x * (1.0 - s));
            cache.start[idx] = start as u32;
            cache.count[idx] = count as u32;
        }

        let n_out = self.out_dim;
        let mut out = Matrix::zeros(rows, n_out);
        let mut spline = vec![0.0; n_out];
        for j in 0..rows {
            let acc = out.row_mut(j);
            for p in 0..self.in_dim {
                let idx = j * self.in_dim + p;
                let start = cache.start[idx] as usize;
                spline.fill(0.0);
                for t in 0..cache.count[idx] as usize {
                    let row = (p * nb + start + t) * n_out;
                    axpy(cache.values[idx * stride + t], &self.spline_coeffs[row..row + n_out], &mut spline);
                }
                let w = p * n_out..(p + 1) * n_out;
                let silu = cache.silu[idx];
                for (((a, &s), &wb), &ws) in acc.iter_mut().zip(&spline).zip(&self.base_weight[w.clone()]).zip(&self.spline_weight[w]) {
                    *a += wb * silu + ws * s;
                }
            }
        }
        Ok((out, cache))
    }

    /// Accumulates parameter gradients and returns `∂L/∂H`.
    pub fn backward(&mut self, cache: &KanCache, upstream: &Matrix) -> Result<Matrix> {
        if cache.in_dim != self.in_dim || cache.out_dim != self.out_dim || cache.stride != self.grid.order() + 1 {
            return Err(Error::StaleCache(format!(
                "cache for {}->{} layer used with {}->{}",
                cache.in_dim, cache.out_dim, self.in_dim, self.out_dim
            )));
        }
        if upstream.shape() != (cache.rows, self.out_dim) {
            return Err(Error::StaleCache(format!(
                "upstream {}x{} vs cached {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.rows,
                self.out_dim
            )));
        }
        let nb = self.grid.basis_count();
        let stride = cache.stride;
        let n_out = self.out_dim;
        let mut spline = vec![0.0; n_out];
        let mut scaled = vec![0.0; n_out];
        let mut grad_in = Matrix::zeros(cache.rows, self.in_dim);
        for j in 0..cache.rows {
            let g = upstream.row(j);
            let gin = grad_in.row_mut(j);
            for (p, gin_p) in gin.iter_mut().enumerate() {
                let idx = j * self.in_dim + p;
                let start = cache.start[idx] as usize;
                let count = cache.count[idx] as usize;
                let w = p * n_out..(p + 1) * n_out;
                // g ⊙ w_s, the upstream seen by the spline coefficients
                for ((s, &gq), &ws) in scaled.iter_mut().zip(g).zip(&self.spline_weight[w.clone()]) {
                    *s = gq * ws;
                }
                spline.fill(0.0);
                let mut d = cache.silu_grad[idx] * dot(g, &self.base_weight[w.clone()]);
                for t in 0..count {
                    let row = (p * nb + start + t) * n_out..(p * nb + start + t + 1) * n_out;
                    let v = cache.values[idx * stride + t];
                    axpy(v, &self.spline_coeffs[row.clone()], &mut spline);
                    d += cache.derivs[idx * stride + t] * dot(&scaled, &self.spline_coeffs[row.clone()]);
                    axpy(v, &scaled, &mut self.grad_spline_coeffs[row]);
                }
                axpy(cache.silu[idx], g, &mut self.grad_base_weight[w.clone()]);
                for ((gs, &gq), &s) in self.grad_spline_weight[w].iter_mut().zip(g).zip(&spline) {
                    *gs += gq * s;
                }
                *gin_p = d;
            }
        }
        Ok(grad_in)
    }

    pub(crate) fn visit_params(&mut self, prefix: &str, visitor: &mut dyn ParamVisitor) {
        visitor.visit(&format!("{prefix}.spline_coeffs"), &mut self.spline_coeffs, &mut self.grad_spline_coeffs);
        visitor.visit(&format!("{prefix}.base_weight"), &mut self.base_weight, &mut self.grad_base_weight);
        visitor.visit(&format!("{prefix}.spline_weight"), &mut self.spline_weight, &mut self.grad_spline_weight);
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, b4) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let (ra, rb) = (a4.remainder(), b4.remainder());
    let mut acc = [0.0; 4];
    for (x, y) in a4.zip(b4) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
