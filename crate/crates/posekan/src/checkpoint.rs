//! Binary checkpoints: architecture, parameters and optimizer state, with a
//! trailing CRC-32. The byte layout is documented in `docs/FORMATS.md`.

use std::path::Path;

use posekan_core::optim::{Amsgrad, LrSchedule, TrainState};
use posekan_core::{ModelConfig, PoseKanModel, SkeletonGraph};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PKAN";
pub const VERSION: u32 = 1;

/// Everything a checkpoint restores.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PoseKanModel,
    pub state: TrainState,
    /// Model output units per millimeter.
    pub target_scale: f64,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.0.reserve(v.len() * 8);
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated { path: self.path.to_path_buf() })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Truncated { path: self.path.to_path_buf() })?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn encode(model: &mut PoseKanModel, state: &TrainState, target_scale: f64) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);

    let graph = model.graph();
    w.u32(graph.joint_count() as u32);
    w.u32(graph.edges().len() as u32);
    for &(a, b) in graph.edges() {
        w.u32(a as u32);
        w.u32(b as u32);
    }
    let c = model.config().clone();
    for v in [c.embed_dim, c.blocks, c.stack_depth, c.grid_size, c.order] {
        w.u32(v as u32);
    }
    for v in [c.spline_lo, c.spline_hi, c.scaling, c.dropout] {
        w.f64(v);
    }
    w.u8(c.irc as u8);
    w.u64(c.seed);
    w.f64(target_scale);

    let params = model.flat_params();
    w.u64(params.len() as u64);
    w.f64s(&params);

    w.u64(state.step);
    w.u64(state.epoch);
    w.f64(state.lr);
    for v in [state.optimizer.beta1, state.optimizer.beta2, state.optimizer.eps, state.schedule.initial, state.schedule.decay] {
        w.f64(v);
    }
    w.u32(state.schedule.every);
    w.u64(state.rng_seed);
    for moments in [&state.m, &state.v, &state.v_hat] {
        w.f64s(moments);
    }

    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "PKAN checkpoint" });
    }
    let mut r = Reader { bytes, pos: MAGIC.len(), path };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, supported: VERSION });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated { path: path.to_path_buf() });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CorruptChecksum { path: path.to_path_buf(), stored, computed });
    }
    let mut r = Reader { bytes: body, pos: r.pos, path };

    let joints = r.u32()? as usize;
    let n_edges = r.u32()? as usize;
    let edges = (0..n_edges).map(|_| Ok((r.u32()? as usize, r.u32()? as usize))).collect::<Result<Vec<_>>>()?;
    let graph = SkeletonGraph::new(joints, &edges)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let [embed_dim, blocks, stack_depth, grid_size, order] = dims;
    let config = ModelConfig {
        embed_dim,
        blocks,
        stack_depth,
        grid_size,
        order,
        spline_lo: r.f64()?,
        spline_hi: r.f64()?,
        scaling: r.f64()?,
        dropout: r.f64()?,
        irc: r.u8()? != 0,
        seed: r.u64()?,
    };
    let target_scale = r.f64()?;
    let expected = config.parameter_count();
    let found = r.u64()? as usize;
    if found != expected {
        return Err(Error::ParameterCount { expected, found });
    }
    let params = r.f64s(found)?;
    let mut model = PoseKanModel::new(graph, config)?;
    model.set_flat_params(&params)?;

    let step = r.u64()?;
    let epoch = r.u64()?;
    let lr = r.f64()?;
    let optimizer = Amsgrad { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
    let schedule = LrSchedule { initial: r.f64()?, decay: r.f64()?, every: r.u32()? };
    let rng_seed = r.u64()?;
    let mut state = TrainState::new(found, optimizer, schedule, rng_seed);
    state.step = step;
    state.epoch = epoch;
    state.lr = lr;
    state.m = r.f64s(found)?;
    state.v = r.f64s(found)?;
    state.v_hat = r.f64s(found)?;
    if r.pos != body.len() {
        return Err(Error::Parse { path: path.to_path_buf(), line: 0, message: "trailing bytes before checksum".into() });
    }
    Ok(Checkpoint { model, state, target_scale })
}

pub fn save(path: &Path, model: &mut PoseKanModel, state: &TrainState, target_scale: f64) -> Result<()> {
    std::fs::write(path, encode(model, state, target_scale)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
