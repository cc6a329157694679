//! Minibatch training over a dataset and evaluation under the standard
//! pose protocols.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::PoseSample;
use crate::error::{Error, Result};
use crate::loss::ElasticLoss;
use crate::matrix::Matrix;
use crate::metrics::{default_auc_thresholds, joint_errors, pa_mpjpe, pck_auc, DEFAULT_PCK_THRESHOLD_MM};
use crate::model::{mix_seed, ForwardCtx, PoseKanModel};
use crate::optim::TrainState;

/// Loop settings that are not part of the architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Model output units per millimeter; targets are multiplied by this
    /// before the loss, predictions divided by it before metrics.
    pub target_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 64, alpha: ElasticLoss::DEFAULT_ALPHA, seed: 42, target_scale: 0.001 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch must be at least 1".into()));
        }
        if !(self.target_scale > 0.0 && self.target_scale.is_finite()) {
            return Err(Error::BadConfig("target_scale must be positive".into()));
        }
        ElasticLoss::new(self.alpha).map(|_| ())
    }
}

/// Per-epoch Fisher–Yates permutation from a stream derived from `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch));
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Forward, loss and backward for one minibatch; gradients accumulate into
/// the model (callers zero them first). Returns the batch loss.
pub fn batch_gradient(
    model: &mut PoseKanModel,
    samples: &[&PoseSample],
    loss: &ElasticLoss,
    target_scale: f64,
    stream: u64,
) -> Result<f64> {
    let total_joints = samples.iter().map(|s| s.joint_count()).sum();
    let mut total = 0.0;
    for (i, sample) in samples.iter().enumerate() {
        let ctx = ForwardCtx::train(mix_seed(stream, i as u64));
        let (y_hat, cache) = model.forward(&sample.input_2d, ctx)?;
        let mut target = sample.target_3d.clone();
        target.scale(target_scale);
        let mut grad = Matrix::zeros(y_hat.rows(), 3);
        total += loss.accumulate(target.as_slice(), y_hat.as_slice(), total_joints, grad.as_mut_slice())?;
        model.backward(&cache, &grad)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    /// Sample-weighted mean of the minibatch losses.
    pub loss: f64,
    pub lr: f64,
}

/// Runs one epoch and advances `state.epoch`.
pub fn train_epoch(model: &mut PoseKanModel, state: &mut TrainState, samples: &[PoseSample], config: &TrainConfig) -> Result<EpochStats> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::BadConfig("training set is empty".into()));
    }
    let loss = ElasticLoss::new(config.alpha)?;
    let epoch = state.epoch;
    state.lr = state.schedule.lr(epoch);
    let order = epoch_order(samples.len(), config.seed, epoch);
    let mut weighted = 0.0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch: Vec<&PoseSample> = chunk.iter().map(|&i| &samples[i]).collect();
        model.zero_grad();
        let stream = mix_seed(mix_seed(config.seed, 0x7261_696e), state.step);
        let batch_loss = batch_gradient(model, &batch, &loss, config.target_scale, stream)?;
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { batch: b });
        }
        state.amsgrad_step(model)?;
        weighted += batch_loss * batch.len() as f64;
    }
    state.epoch += 1;
    Ok(EpochStats { epoch, loss: weighted / samples.len() as f64, lr: state.lr })
}

/// Eval-mode predictions in millimeters.
pub fn predict(model: &PoseKanModel, samples: &[PoseSample], target_scale: f64) -> Result<Vec<Matrix>> {
    samples
        .iter()
        .map(|s| {
            let (mut y, _) = model.forward(&s.input_2d, ForwardCtx::EVAL)?;
            y.scale(1.0 / target_scale);
            Ok(y)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Protocol #1.
    Mpjpe,
    /// Protocol #2, Procrustes aligned.
    PaMpjpe,
    PckAuc,
}

impl Protocol {
    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            Protocol::Mpjpe => &["MPJPE"],
            Protocol::PaMpjpe => &["PA-MPJPE"],
            Protocol::PckAuc => &["PCK", "AUC"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub samples: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// One row per action label, sorted by label.
    pub per_action: Vec<EvalRow>,
    pub average: EvalRow,
    /// Samples skipped by Procrustes alignment.
    pub skipped: Vec<usize>,
}

fn protocol_values(protocol: Protocol, pred: &[Matrix], gt: &[Matrix]) -> Result<(Vec<f64>, Vec<usize>)> {
    Ok(match protocol {
        Protocol::Mpjpe => {
            let e = joint_errors(pred, gt)?;
            (vec![e.iter().sum::<f64>() / e.len().max(1) as f64], Vec::new())
        }
        Protocol::PaMpjpe => {
            let s = pa_mpjpe(pred, gt)?;
            (vec![s.pa_mpjpe], s.skipped)
        }
        Protocol::PckAuc => {
            let (p, a) = pck_auc(pred, gt, DEFAULT_PCK_THRESHOLD_MM, &default_auc_thresholds())?;
            (vec![p, a], Vec::new())
        }
    })
}

/// Metric table for precomputed predictions (mm). Rows are per action when
/// labels are present; the average row covers every sample.
pub fn evaluate_predictions(protocol: Protocol, pred: &[Matrix], samples: &[PoseSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::MissingGroundTruth);
    }
    let gt: Vec<Matrix> = samples.iter().map(|s| s.target_3d.clone()).collect();
    let (values, skipped) = protocol_values(protocol, pred, &gt)?;
    let average = EvalRow { label: "Average".into(), samples: samples.len(), values };

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(a) = &s.action {
            groups.entry(a.as_str()).or_default().push(i);
        }
    }
    let mut per_action = Vec::with_capacity(groups.len());
    for (label, idx) in groups {
        let p: Vec<Matrix> = idx.iter().map(|&i| pred[i].clone()).collect();
        let g: Vec<Matrix> = idx.iter().map(|&i| gt[i].clone()).collect();
        let values = match protocol_values(protocol, &p, &g) {
            Ok((v, _)) => v,
            Err(Error::DegenerateConfiguration(_)) => vec![f64::NAN],
            Err(e) => return Err(e),
        };
        per_action.push(EvalRow { label: label.into(), samples: idx.len(), values });
    }
    Ok(EvalReport { protocol, per_action, average, skipped })
}

pub fn evaluate(model: &PoseKanModel, samples: &[PoseSample], target_scale: f64, protocol: Protocol) -> Result<EvalReport> {
    let pred = predict(model, samples, target_scale)?;
    evaluate_predictions(protocol, &pred, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_task;

    #[test]
    fn order_is_a_permutation() {
        let mut o = epoch_order(50, 3, 2);
        assert_eq!(o, epoch_order(50, 3, 2));
        assert_ne!(o, epoch_order(50, 3, 3));
        o.sort_unstable();
        assert_eq!(o, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn ground_truth_predictions_score_zero() {
        let d = make_synthetic_task(16, 8, 1).unwrap();
        let pred: Vec<Matrix> = d.samples().iter().map(|s| s.target_3d.clone()).collect();
        let r = evaluate_predictions(Protocol::Mpjpe, &pred, d.samples()).unwrap();
        assert_eq!(r.average.values, vec![0.0]);
        assert_eq!(r.per_action.len(), 4);
        let r = evaluate_predictions(Protocol::PckAuc, &pred, d.samples()).unwrap();
        assert_eq!(r.average.values, vec![100.0, 100.0]);
        assert!(matches!(evaluate_predictions(Protocol::Mpjpe, &[], &[]), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn constant_offset_scores_offset() {
        let d = make_synthetic_task(16, 6, 2).unwrap();
        let pred: Vec<Matrix> = d
            .samples()
            .iter()
            .map(|s| {
                let mut p = s.target_3d.clone();
                for j in 0..p.rows() {
                    p[(j, 0)] += 10.0;
                }
                p
            })
            .collect();
        let r = evaluate_predictions(Protocol::Mpjpe, &pred, d.samples()).unwrap();
        assert!((r.average.values[0] - 10.0).abs() < 1e-12);
    }
}
