//! Training, evaluation, prediction and sweep runs on top of the core crate.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use posekan_core::data::{Dataset, PoseSample};
use posekan_core::loss::ElasticLoss;
use posekan_core::metrics::{mpjpe, pa_mpjpe};
use posekan_core::optim::{Amsgrad, TrainState};
use posekan_core::train::{evaluate_predictions, predict, train_epoch, EvalReport, Protocol};
use posekan_core::{Matrix, PoseKanModel, SkeletonGraph};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_dataset, LoadedDataset};
use crate::error::{Error, Result};
use crate::skeleton::load_skeleton;

pub const METRICS_HEADER: &str = "epoch,split,loss,mpjpe,pa_mpjpe,lr,seconds";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn checkpoint_name(epoch: u64) -> String {
    format!("ckpt_epoch{epoch}.pkan")
}

/// One metrics-log row. `epoch` counts completed epochs, starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: u64,
    pub split: &'static str,
    pub loss: f64,
    pub mpjpe: Option<f64>,
    pub pa_mpjpe: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{},{}", self.epoch, self.split, self.loss, opt(self.mpjpe), opt(self.pa_mpjpe), self.lr, self.seconds)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub model: PoseKanModel,
    pub state: TrainState,
    pub rows: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.split == "train").map(|r| r.loss)
    }
}

/// Skeleton, training set and optional validation set named by the config.
pub fn load_run_inputs(cfg: &RunConfig) -> Result<(SkeletonGraph, LoadedDataset, Option<LoadedDataset>)> {
    let skeleton = load_skeleton(&cfg.skeleton_path())?;
    if cfg.data.is_empty() {
        return Err(Error::config("data", "no training dataset given"));
    }
    let train = load_dataset(Path::new(&cfg.data), &skeleton)?;
    train.require_ground_truth()?;
    let val = if cfg.val_data.is_empty() {
        None
    } else {
        let v = load_dataset(Path::new(&cfg.val_data), &skeleton)?;
        v.require_ground_truth()?;
        Some(v)
    };
    Ok((skeleton, train, val))
}

/// Eval-mode elastic loss, in the same units as the training loss.
pub fn eval_loss(model: &PoseKanModel, samples: &[PoseSample], alpha: f64, target_scale: f64) -> Result<f64> {
    let loss = ElasticLoss::new(alpha)?;
    let total_joints = samples.iter().map(|s| s.joint_count()).sum();
    let mut sum = 0.0;
    for (s, pred) in samples.iter().zip(predict(model, samples, target_scale)?) {
        let mut y = s.target_3d.clone();
        y.scale(target_scale);
        let mut y_hat = pred;
        y_hat.scale(target_scale);
        let mut grad = vec![0.0; y.as_slice().len()];
        sum += loss.accumulate(y.as_slice(), y_hat.as_slice(), total_joints, &mut grad)?;
    }
    Ok(sum)
}

fn metric_pair(model: &PoseKanModel, samples: &[PoseSample], target_scale: f64) -> Result<(f64, f64)> {
    let pred = predict(model, samples, target_scale)?;
    let gt: Vec<Matrix> = samples.iter().map(|s| s.target_3d.clone()).collect();
    let pa = pa_mpjpe(&pred, &gt).map(|s| s.pa_mpjpe).unwrap_or(f64::NAN);
    Ok((mpjpe(&pred, &gt)?, pa))
}

/// Trains from scratch. With `out_dir`, writes the metrics log (config echo
/// first) and checkpoints there.
pub fn train_run(cfg: &RunConfig, train: &Dataset, val: Option<&Dataset>, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("data", "training dataset is empty"));
    }
    let mut model = PoseKanModel::new(train.skeleton().clone(), cfg.model_config())?;
    let mut state = TrainState::new(model.parameter_count(), Amsgrad::default(), cfg.schedule(), cfg.seed);
    let tc = cfg.train_config();

    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(w, "{}\n{METRICS_HEADER}", cfg.echo()).map_err(|e| Error::io(&path, e))?;
            Some((path, w))
        }
        None => None,
    };

    let started = Instant::now();
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    for _ in 0..cfg.epochs {
        let stats = train_epoch(&mut model, &mut state, train.samples(), &tc).inspect_err(|e| {
            eprintln!("epoch {}: {e}", state.epoch + 1);
        })?;
        let done = stats.epoch + 1;
        let seconds = if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 };
        let (m, pa) = if cfg.eval_train {
            let (m, pa) = metric_pair(&model, train.samples(), cfg.target_scale)?;
            (Some(m), Some(pa))
        } else {
            (None, None)
        };
        let mut epoch_rows = vec![LogRow { epoch: done, split: "train", loss: stats.loss, mpjpe: m, pa_mpjpe: pa, lr: stats.lr, seconds }];
        if let Some(v) = val {
            let loss = eval_loss(&model, v.samples(), cfg.alpha, cfg.target_scale)?;
            let (m, pa) = metric_pair(&model, v.samples(), cfg.target_scale)?;
            epoch_rows.push(LogRow { epoch: done, split: "val", loss, mpjpe: Some(m), pa_mpjpe: Some(pa), lr: stats.lr, seconds });
        }
        if let Some((path, w)) = log.as_mut() {
            for r in &epoch_rows {
                writeln!(w, "{}", r.to_csv()).map_err(|e| Error::io(&*path, e))?;
            }
            w.flush().map_err(|e| Error::io(&*path, e))?;
        }
        rows.extend(epoch_rows);

        let last = done == cfg.epochs;
        let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
        if let Some(dir) = out_dir.filter(|_| last || periodic) {
            let path = dir.join(checkpoint_name(done));
            checkpoint::save(&path, &mut model, &state, cfg.target_scale)?;
            checkpoints.push(path);
        }
    }
    Ok(RunOutcome { model, state, rows, checkpoints })
}

/// Loads inputs per the config and trains into `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let (_, train, val) = load_run_inputs(cfg)?;
    train_run(cfg, &train.dataset, val.as_ref().map(|v| &v.dataset), Some(Path::new(&cfg.out_dir)))
}

pub fn parse_protocol(name: &str) -> Result<Protocol> {
    match name {
        "mpjpe" | "p1" | "1" => Ok(Protocol::Mpjpe),
        "pa" | "pa_mpjpe" | "pa-mpjpe" | "p2" | "2" => Ok(Protocol::PaMpjpe),
        "pck" | "pck_auc" | "auc" => Ok(Protocol::PckAuc),
        other => Err(Error::config("protocol", format!("unknown protocol `{other}` (mpjpe, pa, pck)"))),
    }
}

/// Human-readable table: one row per action label, then the average.
pub fn format_report(report: &EvalReport) -> String {
    let cols = report.protocol.columns();
    let mut out = format!("{:<20} {:>8}", "action", "samples");
    for c in cols {
        write!(out, " {c:>10}").unwrap();
    }
    out.push('\n');
    for row in report.per_action.iter().chain(std::iter::once(&report.average)) {
        write!(out, "{:<20} {:>8}", row.label, row.samples).unwrap();
        for v in &row.values {
            write!(out, " {v:>10.4}").unwrap();
        }
        out.push('\n');
    }
    if !report.skipped.is_empty() {
        writeln!(out, "skipped {} degenerate samples", report.skipped.len()).unwrap();
    }
    out
}

pub fn report_csv(report: &EvalReport, provenance: &str) -> String {
    let mut out = format!("# eval: {provenance}\naction,samples,{}\n", report.protocol.columns().join(","));
    for row in report.per_action.iter().chain(std::iter::once(&report.average)) {
        let vals: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{},{}", row.label, row.samples, vals.join(",")).unwrap();
    }
    out
}

/// `sample,joint,x,y,z` rows in millimeters.
pub fn predictions_csv(ids: &[String], preds: &[Matrix]) -> String {
    let mut out = String::from("sample,joint,x,y,z\n");
    for (id, p) in ids.iter().zip(preds) {
        for j in 0..p.rows() {
            writeln!(out, "{id},{j},{},{},{}", p[(j, 0)], p[(j, 1)], p[(j, 2)]).unwrap();
        }
    }
    out
}

/// Parses [`predictions_csv`] output, checking sample ids and joint order
/// against the dataset.
pub fn parse_predictions(text: &str, path: &Path, ids: &[String], joints: usize) -> Result<Vec<Matrix>> {
    let bad = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut rows = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match rows.next() {
        Some((_, h)) if h.trim() == "sample,joint,x,y,z" => {}
        _ => return Err(bad(1, "expected header `sample,joint,x,y,z`".into())),
    }
    let mut preds = vec![Matrix::zeros(joints, 3); ids.len()];
    let mut count = 0;
    for (i, line) in rows {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad(i + 1, "expected 5 fields".into()));
        }
        let (s, j) = (count / joints, count % joints);
        if s >= ids.len() || f[0] != ids[s] || f[1] != j.to_string() {
            return Err(bad(i + 1, format!("expected sample {} joint {j}", ids.get(s).map_or("<none>", |v| v))));
        }
        for a in 0..3 {
            preds[s][(j, a)] = f[2 + a].parse().map_err(|_| bad(i + 1, format!("bad number `{}`", f[2 + a])))?;
        }
        count += 1;
    }
    if count != ids.len() * joints {
        return Err(bad(0, format!("expected {} rows, found {count}", ids.len() * joints)));
    }
    Ok(preds)
}

pub fn evaluate_checkpoint(ckpt: &checkpoint::Checkpoint, data: &LoadedDataset, protocol: Protocol) -> Result<EvalReport> {
    let ds = data.require_ground_truth()?;
    let pred = predict(&ckpt.model, ds.samples(), ckpt.target_scale)?;
    Ok(evaluate_predictions(protocol, &pred, ds.samples())?)
}

/// Parameters a sweep can vary, with the config key each one sets.
pub fn sweep_key(param: &str) -> Result<&'static str> {
    match param {
        "s" => Ok("s"),
        "grid" | "grid_size" => Ok("grid_size"),
        "order" => Ok("order"),
        "embed" | "embed_dim" => Ok("embed_dim"),
        other => Err(Error::config("param", format!("cannot sweep `{other}` (s, grid, order, embed)"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub final_loss: Option<f64>,
    pub mpjpe: Option<f64>,
    pub parameter_count: Option<usize>,
    pub status: String,
}

pub const SWEEP_HEADER: &str = "value,final_loss,mpjpe,param_count,status";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.value,
            opt(self.final_loss),
            opt(self.mpjpe),
            self.parameter_count.map(|n| n.to_string()).unwrap_or_default(),
            self.status
        )
    }
}

/// Removes repeated values, keeping first occurrences; returns the duplicates.
pub fn dedup_values(values: &[String]) -> (Vec<String>, Vec<String>) {
    let mut kept: Vec<String> = Vec::new();
    let mut dropped = Vec::new();
    for v in values {
        let v = v.trim().to_string();
        if kept.contains(&v) {
            dropped.push(v);
        } else {
            kept.push(v);
        }
    }
    (kept, dropped)
}

fn sweep_one(base: &RunConfig, key: &str, value: &str, train: &Dataset, val: Option<&Dataset>, root: Option<&Path>) -> SweepRow {
    let attempt = || -> Result<SweepRow> {
        let mut cfg = base.clone();
        cfg.set(key, value)?;
        cfg.validate()?;
        let dir = root.map(|r| r.join(format!("{key}={value}")));
        let out = train_run(&cfg, train, val, dir.as_deref())?;
        let eval_set = val.unwrap_or(train);
        let pred = predict(&out.model, eval_set.samples(), cfg.target_scale)?;
        let gt: Vec<Matrix> = eval_set.samples().iter().map(|s| s.target_3d.clone()).collect();
        Ok(SweepRow {
            value: value.to_string(),
            final_loss: out.final_loss(),
            mpjpe: Some(mpjpe(&pred, &gt)?),
            parameter_count: Some(out.model.parameter_count()),
            status: "ok".into(),
        })
    };
    attempt().unwrap_or_else(|e| SweepRow {
        value: value.to_string(),
        final_loss: None,
        mpjpe: None,
        parameter_count: None,
        status: format!("failed: {}", e.to_string().replace(',', ";")),
    })
}

/// Trains one model per value. Failed runs become `failed` rows; the
/// sweep continues. With `parallel`, runs execute on separate threads.
pub fn run_sweep(
    base: &RunConfig,
    param: &str,
    values: &[String],
    train: &Dataset,
    val: Option<&Dataset>,
    root: Option<&Path>,
    parallel: bool,
) -> Result<Vec<SweepRow>> {
    let key = sweep_key(param)?;
    if parallel {
        Ok(std::thread::scope(|scope| {
            let handles: Vec<_> = values.iter().map(|v| scope.spawn(move || sweep_one(base, key, v, train, val, root))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        }))
    } else {
        Ok(values.iter().map(|v| sweep_one(base, key, v, train, val, root)).collect())
    }
}

pub fn sweep_csv(base: &RunConfig, rows: &[SweepRow]) -> String {
    let mut out = format!("{}\n{SWEEP_HEADER}\n", base.echo());
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
