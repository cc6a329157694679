//! Flat `key = value` run configuration with command-line overrides.

use std::path::{Path, PathBuf};

use posekan_core::optim::LrSchedule;
use posekan_core::train::TrainConfig;
use posekan_core::ModelConfig;

use crate::error::{Error, Result};
use crate::skeleton::BUILTIN_H36M16;

/// Environment variable consulted for the seed when neither the config file
/// nor an override sets one.
pub const SEED_ENV: &str = "POSEKAN_SEED";

/// Prefix of the config echo line written at the top of every CSV output.
pub const ECHO_PREFIX: &str = "# config:";

/// Every key, its default and a one-line description, in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("skeleton", BUILTIN_H36M16, "skeleton file, or builtin:h36m16"),
    ("data", "", "training dataset (text or PKDS binary)"),
    ("val_data", "", "optional validation dataset"),
    ("out_dir", "runs", "directory for metrics.csv and checkpoints"),
    ("embed_dim", "240", "hidden width F"),
    ("s", "0.2", "propagation scaling factor, in (0, 1)"),
    ("alpha", "0.03", "elastic loss L1 weight, in [0, 1]"),
    ("grid_size", "5", "spline grid intervals G"),
    ("order", "3", "spline order k"),
    ("dropout", "0.2", "dropout rate, in [0, 1)"),
    ("blocks", "4", "residual blocks"),
    ("stack_depth", "5", "stacked units per block"),
    ("batch", "64", "minibatch size"),
    ("epochs", "30", "training epochs"),
    ("lr", "0.001", "initial learning rate"),
    ("decay", "0.99", "learning-rate decay factor"),
    ("decay_every", "4", "epochs between decays"),
    ("seed", "42", "seed for init, shuffling and dropout (falls back to POSEKAN_SEED)"),
    ("irc", "true", "inject the start-unit embedding into every unit"),
    ("spline_lo", "-1", "lower end of the spline domain"),
    ("spline_hi", "1", "upper end of the spline domain"),
    ("target_scale", "0.001", "model output units per millimeter"),
    ("checkpoint_every", "0", "write a checkpoint every N epochs (0: final only)"),
    ("eval_train", "false", "also report training-set MPJPE and PA-MPJPE each epoch"),
    ("timing", "false", "record wall-clock seconds in the metrics log (breaks bit-reproducibility)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub skeleton: String,
    pub data: String,
    pub val_data: String,
    pub out_dir: String,
    pub embed_dim: usize,
    pub s: f64,
    pub alpha: f64,
    pub grid_size: usize,
    pub order: usize,
    pub dropout: f64,
    pub blocks: usize,
    pub stack_depth: usize,
    pub batch: usize,
    pub epochs: u64,
    pub lr: f64,
    pub decay: f64,
    pub decay_every: u32,
    pub seed: u64,
    pub irc: bool,
    pub spline_lo: f64,
    pub spline_hi: f64,
    pub target_scale: f64,
    pub checkpoint_every: u64,
    pub eval_train: bool,
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            skeleton: String::new(),
            data: String::new(),
            val_data: String::new(),
            out_dir: String::new(),
            embed_dim: 0,
            s: 0.0,
            alpha: 0.0,
            grid_size: 0,
            order: 0,
            dropout: 0.0,
            blocks: 0,
            stack_depth: 0,
            batch: 0,
            epochs: 0,
            lr: 0.0,
            decay: 0.0,
            decay_every: 0,
            seed: 0,
            irc: false,
            spline_lo: 0.0,
            spline_hi: 0.0,
            target_scale: 0.0,
            checkpoint_every: 0,
            eval_train: false,
            timing: false,
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("defaults parse");
        }
        c
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(key, format!("cannot parse `{value}` as {}", std::any::type_name::<T>())))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "skeleton" => self.skeleton = v.to_string(),
            "data" => self.data = v.to_string(),
            "val_data" => self.val_data = v.to_string(),
            "out_dir" => self.out_dir = v.to_string(),
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "s" => self.s = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "grid_size" => self.grid_size = parse(key, v)?,
            "order" => self.order = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "stack_depth" => self.stack_depth = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "decay" => self.decay = parse(key, v)?,
            "decay_every" => self.decay_every = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "irc" => self.irc = parse(key, v)?,
            "spline_lo" => self.spline_lo = parse(key, v)?,
            "spline_hi" => self.spline_hi = parse(key, v)?,
            "target_scale" => self.target_scale = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval_train" => self.eval_train = parse(key, v)?,
            "timing" => self.timing = parse(key, v)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "skeleton" => self.skeleton.clone(),
            "data" => self.data.clone(),
            "val_data" => self.val_data.clone(),
            "out_dir" => self.out_dir.clone(),
            "embed_dim" => self.embed_dim.to_string(),
            "s" => self.s.to_string(),
            "alpha" => self.alpha.to_string(),
            "grid_size" => self.grid_size.to_string(),
            "order" => self.order.to_string(),
            "dropout" => self.dropout.to_string(),
            "blocks" => self.blocks.to_string(),
            "stack_depth" => self.stack_depth.to_string(),
            "batch" => self.batch.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "decay" => self.decay.to_string(),
            "decay_every" => self.decay_every.to_string(),
            "seed" => self.seed.to_string(),
            "irc" => self.irc.to_string(),
            "spline_lo" => self.spline_lo.to_string(),
            "spline_hi" => self.spline_hi.to_string(),
            "target_scale" => self.target_scale.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "eval_train" => self.eval_train.to_string(),
            "timing" => self.timing.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment. A line beginning
    /// with the echo prefix is read as whitespace-separated `key=value` pairs,
    /// so a metrics CSV can serve as a config file.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        if let Some(first) = text.lines().next() {
            if let Some(pairs) = first.strip_prefix(ECHO_PREFIX) {
                for pair in pairs.split_whitespace() {
                    let (k, v) = pair.split_once('=').ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line: 1,
                        message: format!("expected key=value, got `{pair}`"),
                    })?;
                    self.set(k, v)?;
                }
                return Ok(());
            }
        }
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
        self.set(k, v)
    }

    /// Defaults, then `env_seed`, then the config file, then the overrides.
    pub fn resolve(config_path: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(seed) = env_seed {
            c.seed = seed.trim().parse().map_err(|_| Error::config(SEED_ENV, format!("cannot parse `{seed}` as a seed")))?;
        }
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            c.apply_text(&text, path)?;
        }
        for o in overrides {
            c.apply_override(o)?;
        }
        Ok(c)
    }

    /// Every key with its resolved value, in `KEYS` order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|(k, _, _)| (*k, self.get(k).expect("listed key"))).collect()
    }

    /// Single-line form for CSV headers, loadable by [`apply_text`](Self::apply_text).
    pub fn echo(&self) -> String {
        let body: Vec<String> = self.pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{ECHO_PREFIX} {}", body.join(" "))
    }

    pub fn to_file_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(Error::config(key, msg));
        if !(self.s > 0.0 && self.s < 1.0) {
            return fail("s", &format!("ScalingOutOfRange: s = {} must lie in (0, 1)", self.s));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", "must lie in [0, 1)");
        }
        for (key, v) in
            [("embed_dim", self.embed_dim), ("grid_size", self.grid_size), ("stack_depth", self.stack_depth), ("batch", self.batch)]
        {
            if v == 0 {
                return fail(key, "must be at least 1");
            }
        }
        if self.order > posekan_core::spline::MAX_ORDER {
            return fail("order", &format!("must be at most {}", posekan_core::spline::MAX_ORDER));
        }
        if !(self.spline_lo.is_finite() && self.spline_hi.is_finite() && self.spline_lo < self.spline_hi) {
            return fail("spline_lo", "needs spline_lo < spline_hi, both finite");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail("decay", "must lie in (0, 1]");
        }
        if self.decay_every == 0 {
            return fail("decay_every", "must be at least 1");
        }
        if !(self.target_scale > 0.0 && self.target_scale.is_finite()) {
            return fail("target_scale", "must be positive");
        }
        for (key, v) in [("skeleton", &self.skeleton), ("data", &self.data), ("val_data", &self.val_data), ("out_dir", &self.out_dir)] {
            if v.chars().any(char::is_whitespace) {
                return fail(key, "paths may not contain whitespace");
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            blocks: self.blocks,
            stack_depth: self.stack_depth,
            grid_size: self.grid_size,
            order: self.order,
            spline_lo: self.spline_lo,
            spline_hi: self.spline_hi,
            scaling: self.s,
            dropout: self.dropout,
            irc: self.irc,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { batch_size: self.batch, alpha: self.alpha, seed: self.seed, target_scale: self.target_scale }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { initial: self.lr, decay: self.decay, every: self.decay_every }
    }

    pub fn skeleton_path(&self) -> PathBuf {
        PathBuf::from(&self.skeleton)
    }

    /// Help text listing every key and its default.
    pub fn keys_help() -> String {
        let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        let mut out = String::from("Config keys (flat `key = value`, overridable with --set key=value):\n");
        for (k, d, help) in KEYS {
            let d = if d.is_empty() { "<unset>" } else { d };
            out.push_str(&format!("  {k:<width$}  default {d:<15} {help}\n"));
        }
        out
    }
}
