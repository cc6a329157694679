//! Self-checks: spectral identities, spline properties, and finite-difference
//! agreement of every backward pass. Used by the test suites and the CLI.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckable};
use crate::graph::{verify_filter_identities, SkeletonGraph};
use crate::kan::KanLayer;
use crate::loss::ElasticLoss;
use crate::matrix::Matrix;
use crate::model::{ForwardCtx, ModelConfig, PoseKanModel};
use crate::nn::{gelu_backward, gelu_forward, Grn, LayerNorm};
use crate::spline::SplineGrid;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(suite: &'static str, name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self { suite, name: name.into(), residual, tolerance, passed: residual <= tolerance }
    }
}

/// Random tree on `joints` nodes plus up to `extra_edges` random chords.
pub fn random_connected_graph<R: Rng>(joints: usize, extra_edges: usize, rng: &mut R) -> SkeletonGraph {
    assert!(joints >= 2);
    let mut edges: Vec<(usize, usize)> = (1..joints).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..extra_edges {
        let a = rng.random_range(0..joints);
        let b = rng.random_range(0..joints);
        if a != b {
            edges.push((a, b));
        }
    }
    SkeletonGraph::new(joints, &edges).expect("spanning tree covers every joint")
}

/// Identity residuals on `graphs` random connected graphs (3..=12 joints),
/// each at `scalings`, plus the default skeleton. One row per identity,
/// holding the worst residual seen.
pub fn filter_suite(graphs: usize, scalings: &[f64], seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = vec![SkeletonGraph::h36m16()];
    for _ in 0..graphs {
        let j = rng.random_range(3..=12);
        let extra = rng.random_range(0..=j);
        all.push(random_connected_graph(j, extra, &mut rng));
    }
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for g in &all {
        for &s in scalings {
            let report = verify_filter_identities(g, s)?;
            for c in report.checks {
                match worst.iter_mut().find(|(n, _)| *n == c.name) {
                    Some(w) => w.1 = w.1.max(c.residual),
                    None => worst.push((c.name, c.residual)),
                }
            }
        }
    }
    Ok(worst.into_iter().map(|(name, r)| CheckRow::new("filters", name, r, crate::graph::FILTER_IDENTITY_TOL)).collect())
}

/// Partition of unity, non-negativity and local support over `points`
/// random interior points for every `(G, k)` in `{3,5,8}×{1,2,3}`.
pub fn spline_suite(points: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unity: f64 = 0.0;
    let mut negativity: f64 = 0.0;
    let mut support_excess: f64 = 0.0;
    for g in [3, 5, 8] {
        for k in [1, 2, 3] {
            let grid = SplineGrid::new(g, k, -1.0, 1.0)?;
            for _ in 0..points {
                let x: f64 = rng.random_range(-1.0..1.0);
                let b = grid.basis(x)?;
                unity = unity.max(libm::fabs(b.iter().sum::<f64>() - 1.0));
                let min = b.iter().copied().fold(0.0, f64::min);
                if min < 0.0 {
                    negativity = negativity.max(-min);
                }
                let active = b.iter().filter(|&&v| v != 0.0).count();
                support_excess = support_excess.max(active as f64 - (k + 1) as f64);
            }
        }
    }
    Ok(vec![
        CheckRow::new("splines", "partition_of_unity", unity, 1e-10),
        CheckRow::new("splines", "non_negativity", negativity, 0.0),
        CheckRow::new("splines", "local_support", support_excess.max(0.0), 0.0),
    ])
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// `y = W x`.
pub struct LinearMapCheck {
    pub weights: Matrix,
    pub input: Vec<f64>,
}

impl GradCheckable for LinearMapCheck {
    fn point(&self) -> Vec<f64> {
        let mut p = self.weights.as_slice().to_vec();
        p.extend_from_slice(&self.input);
        p
    }

    fn set_point(&mut self, x: &[f64]) {
        let n = self.weights.as_slice().len();
        self.weights.as_mut_slice().copy_from_slice(&x[..n]);
        self.input.copy_from_slice(&x[n..]);
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(self.input.len(), 1, self.input.clone());
        Ok(self.weights.matmul(&x)?.into_vec())
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = self.weights.shape();
        let mut g = vec![0.0; rows * cols + cols];
        for r in 0..rows {
            for c in 0..cols {
                g[r * cols + c] = upstream[r] * self.input[c];
                g[rows * cols + c] += upstream[r] * self.weights[(r, c)];
            }
        }
        Ok(g)
    }
}

/// A KAN layer applied to a fixed input; the point is all parameters then the input.
pub struct KanCheck {
    pub layer: KanLayer,
    pub input: Matrix,
}

impl GradCheckable for KanCheck {
    fn point(&self) -> Vec<f64> {
        [self.layer.spline_coeffs(), self.layer.base_weight(), self.layer.spline_weight(), self.input.as_slice()].concat()
    }

    fn set_point(&mut self, x: &[f64]) {
        let (a, b) = (self.layer.spline_coeffs().len(), self.layer.base_weight().len());
        self.layer.spline_coeffs_mut().copy_from_slice(&x[..a]);
        self.layer.base_weight_mut().copy_from_slice(&x[a..a + b]);
        self.layer.spline_weight_mut().copy_from_slice(&x[a + b..a + 2 * b]);
        self.input.as_mut_slice().copy_from_slice(&x[a + 2 * b..]);
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        Ok(self.layer.forward(&self.input)?.0.into_vec())
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        self.layer.zero_grad();
        let (y, cache) = self.layer.forward(&self.input)?;
        let up = Matrix::from_vec(y.rows(), y.cols(), upstream.to_vec());
        let gin = self.layer.backward(&cache, &up)?;
        Ok([self.layer.grad_spline_coeffs(), self.layer.grad_base_weight(), self.layer.grad_spline_weight(), gin.as_slice()].concat())
    }
}

pub struct LayerNormCheck {
    pub norm: LayerNorm,
    pub input: Matrix,
    /// Apply GELU after the normalization.
    pub with_gelu: bool,
}

impl GradCheckable for LayerNormCheck {
    fn point(&self) -> Vec<f64> {
        [&self.norm.scale[..], &self.norm.shift[..], self.input.as_slice()].concat()
    }

    fn set_point(&mut self, x: &[f64]) {
        let f = self.norm.dim();
        self.norm.scale.copy_from_slice(&x[..f]);
        self.norm.shift.copy_from_slice(&x[f..2 * f]);
        self.input.as_mut_slice().copy_from_slice(&x[2 * f..]);
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        let (y, _) = self.norm.forward(&self.input)?;
        Ok(if self.with_gelu { gelu_forward(&y) } else { y }.into_vec())
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        self.norm.zero_grad();
        let (y, cache) = self.norm.forward(&self.input)?;
        let mut up = Matrix::from_vec(y.rows(), y.cols(), upstream.to_vec());
        if self.with_gelu {
            up = gelu_backward(&y, &up)?;
        }
        let gin = self.norm.backward(&cache, &up)?;
        Ok([&self.norm.grad_scale[..], &self.norm.grad_shift[..], gin.as_slice()].concat())
    }
}

pub struct GrnCheck {
    pub grn: Grn,
    pub input: Matrix,
}

impl GradCheckable for GrnCheck {
    fn point(&self) -> Vec<f64> {
        [&self.grn.gamma[..], &self.grn.beta[..], self.input.as_slice()].concat()
    }

    fn set_point(&mut self, x: &[f64]) {
        let f = self.grn.dim();
        self.grn.gamma.copy_from_slice(&x[..f]);
        self.grn.beta.copy_from_slice(&x[f..2 * f]);
        self.input.as_mut_slice().copy_from_slice(&x[2 * f..]);
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        Ok(self.grn.forward(&self.input)?.0.into_vec())
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        self.grn.zero_grad();
        let (y, cache) = self.grn.forward(&self.input)?;
        let gin = self.grn.backward(&cache, &Matrix::from_vec(y.rows(), y.cols(), upstream.to_vec()))?;
        Ok([&self.grn.grad_gamma[..], &self.grn.grad_beta[..], gin.as_slice()].concat())
    }
}

/// The loss as a function of the predictions.
pub struct ElasticLossCheck {
    pub loss: ElasticLoss,
    pub target: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl GradCheckable for ElasticLossCheck {
    fn point(&self) -> Vec<f64> {
        self.prediction.clone()
    }

    fn set_point(&mut self, x: &[f64]) {
        self.prediction.copy_from_slice(x);
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        Ok(vec![self.loss.evaluate(&self.target, &self.prediction)?.0])
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        let (_, g) = self.loss.evaluate(&self.target, &self.prediction)?;
        Ok(g.into_iter().map(|v| v * upstream[0]).collect())
    }
}

/// The whole network; the point is every parameter then the 2D input.
pub struct ModelCheck {
    pub model: PoseKanModel,
    pub input: Matrix,
    pub ctx: ForwardCtx,
}

impl GradCheckable for ModelCheck {
    fn point(&self) -> Vec<f64> {
        let mut m = self.model.clone();
        let mut p = m.flat_params();
        p.extend_from_slice(self.input.as_slice());
        p
    }

    fn set_point(&mut self, x: &[f64]) {
        let n = self.model.parameter_count();
        self.model.set_flat_params(&x[..n]).expect("length checked");
        self.input.as_mut_slice().copy_from_slice(&x[n..]);
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        Ok(self.model.forward(&self.input, self.ctx)?.0.into_vec())
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        self.model.zero_grad();
        let (y, cache) = self.model.forward(&self.input, self.ctx)?;
        let g = self.model.backward(&cache, &Matrix::from_vec(y.rows(), y.cols(), upstream.to_vec()))?;
        let mut out = self.model.flat_grads();
        out.extend_from_slice(g.input.as_slice());
        Ok(out)
    }
}

/// Everything after the start unit as a function of `X̃` alone.
pub struct EmbeddingCheck {
    pub model: PoseKanModel,
    pub embedding: Matrix,
}

impl GradCheckable for EmbeddingCheck {
    fn point(&self) -> Vec<f64> {
        self.embedding.as_slice().to_vec()
    }

    fn set_point(&mut self, x: &[f64]) {
        self.embedding.as_mut_slice().copy_from_slice(x);
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        Ok(self.model.trunk_forward(&self.embedding, ForwardCtx::EVAL)?.0.into_vec())
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        let (y, cache) = self.model.trunk_forward(&self.embedding, ForwardCtx::EVAL)?;
        Ok(self.model.trunk_backward(&cache, &Matrix::from_vec(y.rows(), y.cols(), upstream.to_vec()))?.into_vec())
    }
}

/// Scales another op's analytic gradient; lets callers confirm a broken
/// backward pass is caught.
pub struct Perturbed<T> {
    pub inner: T,
    pub factor: f64,
}

impl<T: GradCheckable> GradCheckable for Perturbed<T> {
    fn point(&self) -> Vec<f64> {
        self.inner.point()
    }

    fn set_point(&mut self, x: &[f64]) {
        self.inner.set_point(x)
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        self.inner.output()
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inner.gradient(upstream)?.into_iter().map(|g| g * self.factor).collect())
    }
}

pub const GRADIENT_OPS: [&str; 7] = ["linear", "kan_layer", "layernorm", "grn", "gelu_composite", "elastic_loss", "model"];

/// Builds the named op at a seeded random point.
pub fn gradient_op(name: &str, seed: u64) -> Option<alloc::boxed::Box<dyn GradCheckable>> {
    use alloc::boxed::Box;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op: Box<dyn GradCheckable> = match name {
        "linear" => Box::new(LinearMapCheck {
            weights: random_matrix(3, 4, -1.0, 1.0, &mut rng),
            input: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }),
        "kan_layer" => {
            let grid = SplineGrid::new(5, 3, -1.0, 1.0).ok()?;
            Box::new(KanCheck { layer: KanLayer::init(4, 3, grid, rng.random()).ok()?, input: random_matrix(3, 4, -1.4, 1.4, &mut rng) })
        }
        "layernorm" | "gelu_composite" => {
            let mut norm = LayerNorm::new(6);
            norm.scale = (0..6).map(|_| rng.random_range(0.5..1.5)).collect();
            norm.shift = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
            Box::new(LayerNormCheck { norm, input: random_matrix(4, 6, -2.0, 2.0, &mut rng), with_gelu: name == "gelu_composite" })
        }
        "grn" => {
            let mut grn = Grn::new(6);
            grn.gamma = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            grn.beta = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            Box::new(GrnCheck { grn, input: random_matrix(4, 6, -2.0, 2.0, &mut rng) })
        }
        "elastic_loss" => {
            let target: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
            // keep every coordinate at least 1e-3 away from the |·| kink
            let prediction = target
                .iter()
                .map(|t| {
                    let d: f64 = rng.random_range(1e-3..0.5);
                    if rng.random::<bool>() {
                        t + d
                    } else {
                        t - d
                    }
                })
                .collect();
            Box::new(ElasticLossCheck { loss: ElasticLoss::new(0.3).ok()?, target, prediction })
        }
        "model" => {
            let graph = random_connected_graph(5, 2, &mut rng);
            let config = ModelConfig { embed_dim: 8, blocks: 1, seed: rng.random(), ..ModelConfig::default() };
            let mut model = PoseKanModel::new(graph, config).ok()?;
            // GRN starts at zero; move it off the identity so its gradients matter.
            let gamma: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
            let beta: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
            model.grn_mut().gamma.copy_from_slice(&gamma);
            model.grn_mut().beta.copy_from_slice(&beta);
            Box::new(ModelCheck { model, input: random_matrix(5, 2, -1.0, 1.0, &mut rng), ctx: ForwardCtx::train(rng.random()) })
        }
        _ => return None,
    };
    Some(op)
}

/// Finite-difference check of every op in [`GRADIENT_OPS`]. `perturb` names
/// an op whose analytic gradient is scaled by 1.01 before comparison.
pub fn gradient_suite(seed: u64, perturb: Option<&str>) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (i, name) in GRADIENT_OPS.iter().enumerate() {
        let op = gradient_op(name, seed.wrapping_add(i as u64)).expect("known op");
        let mut op: alloc::boxed::Box<dyn GradCheckable> =
            if perturb == Some(*name) { alloc::boxed::Box::new(Perturbed { inner: op, factor: 1.01 }) } else { op };
        let report = grad_check(op.as_mut(), GRAD_STEP, GRAD_TOL, seed ^ 0x5eed)?;
        rows.push(CheckRow::new("gradients", format!("{name} ({} coords)", report.coordinates), report.max_rel_error, GRAD_TOL));
    }
    Ok(rows)
}

impl GradCheckable for alloc::boxed::Box<dyn GradCheckable> {
    fn point(&self) -> Vec<f64> {
        (**self).point()
    }

    fn set_point(&mut self, x: &[f64]) {
        (**self).set_point(x)
    }

    fn output(&mut self) -> Result<Vec<f64>> {
        (**self).output()
    }

    fn gradient(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        (**self).gradient(upstream)
    }
}
