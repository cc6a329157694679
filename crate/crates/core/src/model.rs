//! The full lifting network: start unit, residual blocks, GRN, end unit.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{validate_training_scaling, PropagationMatrix, SkeletonGraph};
use crate::kan::{KanCache, KanLayer};
use crate::matrix::Matrix;
use crate::nn::{dropout_forward, gelu_backward, gelu_forward, DropoutMask, Grn, GrnCache, LayerNorm, LayerNormCache, Mode};
use crate::params::ParamVisitor;
use crate::spline::{SplineGrid, MAX_ORDER};

/// Architecture hyperparameters. The graph is supplied separately.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub blocks: usize,
    pub stack_depth: usize,
    pub grid_size: usize,
    pub order: usize,
    pub spline_lo: f64,
    pub spline_hi: f64,
    pub scaling: f64,
    pub dropout: f64,
    pub irc: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 240,
            blocks: 4,
            stack_depth: 5,
            grid_size: 5,
            order: 3,
            spline_lo: -1.0,
            spline_hi: 1.0,
            scaling: 0.2,
            dropout: 0.2,
            irc: true,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::BadConfig(msg));
        if self.embed_dim == 0 {
            return bad("embed_dim must be at least 1".into());
        }
        if self.stack_depth == 0 {
            return bad("stack_depth must be at least 1".into());
        }
        if self.grid_size == 0 {
            return bad("grid_size must be at least 1".into());
        }
        if self.order > MAX_ORDER {
            return bad(format!("order must be at most {MAX_ORDER}"));
        }
        if !(self.spline_lo.is_finite() && self.spline_hi.is_finite() && self.spline_lo < self.spline_hi) {
            return bad("spline domain needs spline_lo < spline_hi".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)".into());
        }
        validate_training_scaling(self.scaling)
    }

    pub fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::new(self.grid_size, self.order, self.spline_lo, self.spline_hi)
    }

    /// `Σ in·out·(G+k+2)` over KAN layers plus `2F` per LayerNorm and for GRN.
    pub fn parameter_count(&self) -> usize {
        let f = self.embed_dim;
        let per_edge = self.grid_size + self.order + 2;
        let kan_edges = 2 * f + self.blocks * (self.stack_depth + 1) * f * f + f * 3;
        kan_edges * per_edge + 2 * f * (self.blocks + 1)
    }
}

/// Stream id for dropout masks; derived per (seed, step, sample) by callers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub stream: u64,
}

impl ForwardCtx {
    pub const EVAL: ForwardCtx = ForwardCtx { mode: Mode::Eval, stream: 0 };

    pub fn train(stream: u64) -> Self {
        Self { mode: Mode::Train, stream }
    }
}

/// SplitMix64 finalizer, used to derive independent RNG seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `KAN(P·H + X̃)` (or `KAN(P·H)` without the initial residual), then dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseKanUnit {
    pub kan: KanLayer,
    pub uses_irc: bool,
    pub dropout_rate: f64,
    id: u64,
}

#[derive(Debug, Clone)]
pub struct UnitCache {
    kan: KanCache,
    mask: DropoutMask,
}

impl PoseKanUnit {
    fn forward(&self, prop: &PropagationMatrix, h: &Matrix, injected: &Matrix, ctx: ForwardCtx) -> Result<(Matrix, UnitCache)> {
        let g = if self.uses_irc { prop.apply(h, injected)? } else { prop.propagate(h)? };
        let (y, kan) = self.kan.forward(&g)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(ctx.stream, self.id));
        let (y, mask) = dropout_forward(&y, self.dropout_rate, ctx.mode, &mut rng)?;
        Ok((y, UnitCache { kan, mask }))
    }

    /// Returns `(∂/∂H, ∂/∂X̃)`; the second is `None` without the initial residual.
    fn backward(&mut self, prop: &PropagationMatrix, cache: &UnitCache, upstream: &Matrix) -> Result<(Matrix, Option<Matrix>)> {
        let d = cache.mask.backward(upstream);
        let dg = self.kan.backward(&cache.kan, &d)?;
        // P is symmetric, so Pᵀ·dG = P·dG.
        let dh = prop.propagate(&dg)?;
        Ok((dh, if self.uses_irc { Some(dg) } else { None }))
    }
}

/// `input + GELU(tail(norm(stack(input))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub stack: Vec<PoseKanUnit>,
    pub norm: LayerNorm,
    pub tail: PoseKanUnit,
}

#[derive(Debug, Clone)]
struct BlockCache {
    stack: Vec<UnitCache>,
    norm: LayerNormCache,
    tail: UnitCache,
    tail_out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseKanModel {
    config: ModelConfig,
    graph: SkeletonGraph,
    prop: PropagationMatrix,
    start: PoseKanUnit,
    blocks: Vec<ResidualBlock>,
    grn: Grn,
    end: PoseKanUnit,
}

/// Everything [`PoseKanModel::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ModelCache {
    start: UnitCache,
    trunk: TrunkCache,
}

#[derive(Debug, Clone)]
pub struct TrunkCache {
    embedding_shape: (usize, usize),
    blocks: Vec<BlockCache>,
    grn: GrnCache,
    end: UnitCache,
}

/// Gradients with respect to the network input and the start-unit output `X̃`.
#[derive(Debug, Clone)]
pub struct InputGradients {
    pub input: Matrix,
    pub embedding: Matrix,
}

impl PoseKanModel {
    pub fn new(graph: SkeletonGraph, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let prop = PropagationMatrix::new(&graph, config.scaling)?;
        let f = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut next_id = 0u64;
        let mut unit = |inp: usize, out: usize, dropout: f64, rng: &mut ChaCha8Rng| -> Result<PoseKanUnit> {
            next_id += 1;
            Ok(PoseKanUnit {
                kan: KanLayer::init_with_rng(inp, out, grid.clone(), rng)?,
                uses_irc: config.irc,
                dropout_rate: dropout,
                id: next_id,
            })
        };
        let start = unit(2, f, config.dropout, &mut rng)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let stack = (0..config.stack_depth).map(|_| unit(f, f, config.dropout, &mut rng)).collect::<Result<Vec<_>>>()?;
            let tail = unit(f, f, config.dropout, &mut rng)?;
            blocks.push(ResidualBlock { stack, norm: LayerNorm::new(f), tail });
        }
        // No dropout on the regression output.
        let end = unit(f, 3, 0.0, &mut rng)?;
        Ok(Self { config, graph, prop, start, blocks, grn: Grn::new(f), end })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn propagation(&self) -> &PropagationMatrix {
        &self.prop
    }

    pub fn joint_count(&self) -> usize {
        self.graph.joint_count()
    }

    pub fn start(&self) -> &PoseKanUnit {
        &self.start
    }

    pub fn start_mut(&mut self) -> &mut PoseKanUnit {
        &mut self.start
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ResidualBlock] {
        &mut self.blocks
    }

    pub fn grn(&self) -> &Grn {
        &self.grn
    }

    pub fn grn_mut(&mut self) -> &mut Grn {
        &mut self.grn
    }

    pub fn end(&self) -> &PoseKanUnit {
        &self.end
    }

    pub fn end_mut(&mut self) -> &mut PoseKanUnit {
        &mut self.end
    }

    /// Maps `J×2` keypoints to `J×3` joints.
    pub fn forward(&self, x: &Matrix, ctx: ForwardCtx) -> Result<(Matrix, ModelCache)> {
        x.ensure_shape(self.joint_count(), 2)?;
        let (x_tilde, start) = self.start.forward(&self.prop, x, x, ctx)?;
        let (y, trunk) = self.trunk_forward(&x_tilde, ctx)?;
        Ok((y, ModelCache { start, trunk }))
    }

    /// Everything after the start unit, with `X̃` supplied directly.
    pub fn trunk_forward(&self, x_tilde: &Matrix, ctx: ForwardCtx) -> Result<(Matrix, TrunkCache)> {
        x_tilde.ensure_shape(self.joint_count(), self.config.embed_dim)?;
        let mut h = x_tilde.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let mut t = h.clone();
            let mut stack = Vec::with_capacity(block.stack.len());
            for unit in &block.stack {
                let (next, c) = unit.forward(&self.prop, &t, x_tilde, ctx)?;
                stack.push(c);
                t = next;
            }
            let (n, norm) = block.norm.forward(&t)?;
            let (tail_out, tail) = block.tail.forward(&self.prop, &n, x_tilde, ctx)?;
            h.add_assign(&gelu_forward(&tail_out))?;
            blocks.push(BlockCache { stack, norm, tail, tail_out });
        }
        let (g, grn) = self.grn.forward(&h)?;
        let (y, end) = self.end.forward(&self.prop, &g, x_tilde, ctx)?;
        Ok((y, TrunkCache { embedding_shape: x_tilde.shape(), blocks, grn, end }))
    }

    /// Accumulates gradients for every parameter and returns input gradients.
    pub fn backward(&mut self, cache: &ModelCache, upstream: &Matrix) -> Result<InputGradients> {
        let embedding = self.trunk_backward(&cache.trunk, upstream)?;
        let (mut input, injected) = self.start.backward(&self.prop, &cache.start, &embedding)?;
        if let Some(inj) = injected {
            input.add_assign(&inj)?;
        }
        Ok(InputGradients { input, embedding })
    }

    /// Returns `∂L/∂X̃`, summed over the block-0 input and every injection site.
    pub fn trunk_backward(&mut self, cache: &TrunkCache, upstream: &Matrix) -> Result<Matrix> {
        if upstream.shape() != (self.joint_count(), 3) || cache.blocks.len() != self.blocks.len() {
            return Err(Error::StaleCache(format!(
                "upstream {}x{} / {} cached blocks for a {}-joint, {}-block model",
                upstream.rows(),
                upstream.cols(),
                cache.blocks.len(),
                self.joint_count(),
                self.blocks.len()
            )));
        }
        if cache.embedding_shape != (self.joint_count(), self.config.embed_dim) {
            return Err(Error::StaleCache("embedding shape".into()));
        }
        let mut d_embed = Matrix::zeros(cache.embedding_shape.0, cache.embedding_shape.1);
        let (dg, inj) = self.end.backward(&self.prop, &cache.end, upstream)?;
        if let Some(inj) = inj {
            d_embed.add_assign(&inj)?;
        }
        let mut dh = self.grn.backward(&cache.grn, &dg)?;
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            if bc.stack.len() != block.stack.len() {
                return Err(Error::StaleCache("stack depth".into()));
            }
            let d_tail = gelu_backward(&bc.tail_out, &dh)?;
            let (dn, inj) = block.tail.backward(&self.prop, &bc.tail, &d_tail)?;
            if let Some(inj) = inj {
                d_embed.add_assign(&inj)?;
            }
            let mut dt = block.norm.backward(&bc.norm, &dn)?;
            for (unit, uc) in block.stack.iter_mut().zip(&bc.stack).rev() {
                let (prev, inj) = unit.backward(&self.prop, uc, &dt)?;
                if let Some(inj) = inj {
                    d_embed.add_assign(&inj)?;
                }
                dt = prev;
            }
            dh.add_assign(&dt)?;
        }
        d_embed.add_assign(&dh)?;
        Ok(d_embed)
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_: &str, _: &mut [f64], g: &mut [f64]| g.fill(0.0));
    }

    /// Visits parameter tensors in declaration order: start, each block's
    /// stacked units, norm and tail, then GRN, then end.
    pub fn visit_params(&mut self, visitor: &mut dyn ParamVisitor) {
        self.start.kan.visit_params("start", visitor);
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (u, unit) in block.stack.iter_mut().enumerate() {
                unit.kan.visit_params(&format!("block{b}.unit{u}"), visitor);
            }
            block.norm.visit_params(&format!("block{b}.norm"), visitor);
            block.tail.kan.visit_params(&format!("block{b}.tail"), visitor);
        }
        self.grn.visit_params("grn", visitor);
        self.end.kan.visit_params("end", visitor);
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = self.start.kan.parameter_count() + self.grn.parameter_count() + self.end.kan.parameter_count();
        for b in &self.blocks {
            n += b.stack.iter().map(|u| u.kan.parameter_count()).sum::<usize>();
            n += b.norm.parameter_count() + b.tail.kan.parameter_count();
        }
        n
    }

    /// All parameters flattened in declaration order.
    pub fn flat_params(&mut self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.visit_params(&mut |_: &str, p: &mut [f64], _: &mut [f64]| out.extend_from_slice(p));
        out
    }

    /// All gradient slots flattened in declaration order.
    pub fn flat_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        self.visit_params(&mut |_: &str, _: &mut [f64], g: &mut [f64]| out.extend_from_slice(g));
        out
    }

    /// Inverse of [`flat_params`](Self::flat_params).
    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::BadConfig(format!("expected {} parameters, got {}", self.parameter_count(), values.len())));
        }
        let mut off = 0;
        self.visit_params(&mut |_: &str, p: &mut [f64], _: &mut [f64]| {
            p.copy_from_slice(&values[off..off + p.len()]);
            off += p.len();
        });
        Ok(())
    }
}
