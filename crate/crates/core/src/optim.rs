//! Cross-entropy objective, Adam and Ranger (RAdam + Lookahead) optimizers,
//! learning-rate schedules and the balanced-batch training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{BalancedBatches, Sample};
use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::math;
use crate::metrics::ConfusionMatrix;
use crate::model::{ModelConfig, ModelParams};

/// Returns `(−log softmax(logits)[label], softmax(logits) − onehot(label))`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Input(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(logits.iter().map(|v| math::exp(v - max)).sum::<f64>());
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Adam,
    /// RAdam wrapped in Lookahead.
    #[default]
    Ranger,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Hyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Lookahead synchronization period, in steps.
    pub lookahead_k: u64,
    /// Lookahead interpolation factor toward the fast weights.
    pub lookahead_alpha: f64,
    /// RAdam uses the rectified update once the variance length reaches this.
    pub rectify_threshold: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, lookahead_k: 6, lookahead_alpha: 0.5, rectify_threshold: 5.0 }
    }
}

/// Which RAdam update a step used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadamBranch {
    /// Adaptive step scaled by the variance rectification term.
    Rectified,
    /// Bias-corrected momentum step, taken while the rectification term is
    /// undefined.
    Momentum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub slow_weights: Option<Vec<Vec<f64>>>,
    pub hyper: Hyper,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, params: &[&[f64]], hyper: Hyper) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let slow_weights = (kind == OptimizerKind::Ranger).then(|| params.iter().map(|p| p.to_vec()).collect());
        Self { kind, step: 0, first_moment: zeros(), second_moment: zeros(), slow_weights, hyper }
    }

    pub fn for_model(kind: OptimizerKind, params: &ModelParams, hyper: Hyper) -> Self {
        Self::new(kind, &params.tensors(), hyper)
    }

    fn check(&self, params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let ok = params.len() == self.first_moment.len()
            && grads.len() == params.len()
            && params
                .iter()
                .zip(grads)
                .zip(&self.first_moment)
                .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("optimizer state, parameters and gradients disagree in shape".into()))
        }
    }

    fn update_moments(&mut self, grads: &[&[f64]]) {
        let Hyper { beta1, beta2, .. } = self.hyper;
        for ((m, v), g) in self.first_moment.iter_mut().zip(&mut self.second_moment).zip(grads) {
            for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
        }
    }

    /// Applies one update of the configured kind.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<Option<RadamBranch>> {
        match self.kind {
            OptimizerKind::Adam => adam_step(self, params, grads, lr).map(|_| None),
            OptimizerKind::Ranger => ranger_step(self, params, grads, lr).map(Some),
        }
    }

    pub fn step_model(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<Option<RadamBranch>> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        self.step(&mut p, &g, lr)
    }
}

/// Bias-corrected Adam.
pub fn adam_step(state: &mut OptimState, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
    state.check(params, grads)?;
    state.step += 1;
    state.update_moments(grads);
    let Hyper { beta1, beta2, eps, .. } = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(beta1, t);
    let bc2 = 1.0 - math::powi(beta2, t);
    for ((p, m), v) in params.iter_mut().zip(&state.first_moment).zip(&state.second_moment) {
        for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
            *pi -= lr * (mi / bc1) / (math::sqrt(vi / bc2) + eps);
        }
    }
    Ok(())
}

/// RAdam step followed by a Lookahead synchronization every `lookahead_k`
/// steps.
pub fn ranger_step(state: &mut OptimState, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<RadamBranch> {
    state.check(params, grads)?;
    if state.slow_weights.is_none() {
        return Err(Error::Input("ranger step needs lookahead slow weights".into()));
    }
    state.step += 1;
    state.update_moments(grads);
    let Hyper { beta1, beta2, eps, lookahead_k, lookahead_alpha, rectify_threshold } = state.hyper;
    let t = state.step as i32;
    let beta2_t = math::powi(beta2, t);
    let bc1 = 1.0 - math::powi(beta1, t);
    let bc2 = 1.0 - beta2_t;
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let rho_t = rho_inf - 2.0 * state.step as f64 * beta2_t / bc2;
    let branch = if rho_t >= rectify_threshold { RadamBranch::Rectified } else { RadamBranch::Momentum };
    match branch {
        RadamBranch::Rectified => {
            let r = math::sqrt(
                (rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t),
            );
            for ((p, m), v) in params.iter_mut().zip(&state.first_moment).zip(&state.second_moment) {
                for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
                    *pi -= lr * r * (mi / bc1) / (math::sqrt(vi / bc2) + eps);
                }
            }
        }
        RadamBranch::Momentum => {
            for (p, m) in params.iter_mut().zip(&state.first_moment) {
                for (pi, mi) in p.iter_mut().zip(m) {
                    *pi -= lr * mi / bc1;
                }
            }
        }
    }
    if lookahead_k > 0 && state.step % lookahead_k == 0 {
        let slow = state.slow_weights.as_mut().expect("checked above");
        for (p, s) in params.iter_mut().zip(slow.iter_mut()) {
            for (pi, si) in p.iter_mut().zip(s.iter_mut()) {
                *si += lookahead_alpha * (*pi - *si);
                *pi = *si;
            }
        }
    }
    Ok(branch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScheduleKind {
    /// `base_lr` until `switch_epoch`, then cosine down to `final_lr` at the
    /// last epoch.
    FlatThenCosine,
    /// Cosine from `base_lr` at epoch 0 to `final_lr` at the last epoch.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub final_lr: f64,
    pub switch_epoch: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    /// 0.001 for 50 epochs, then cosine to 0.0001 at epoch 69.
    pub fn tcg() -> Self {
        Self { kind: ScheduleKind::FlatThenCosine, base_lr: 1e-3, final_lr: 1e-4, switch_epoch: 50, total_epochs: 70 }
    }

    /// Cosine from 0.001 to a tenth of it over 80 epochs.
    pub fn drive_act() -> Self {
        Self { kind: ScheduleKind::Cosine, base_lr: 1e-3, final_lr: 1e-4, switch_epoch: 0, total_epochs: 80 }
    }

    pub fn constant(lr: f64, total_epochs: usize) -> Self {
        Self { kind: ScheduleKind::FlatThenCosine, base_lr: lr, final_lr: lr, switch_epoch: total_epochs, total_epochs }
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::Input(format!("epoch {epoch} outside schedule of {} epochs", self.total_epochs)));
        }
        let start = match self.kind {
            ScheduleKind::FlatThenCosine => self.switch_epoch,
            ScheduleKind::Cosine => 0,
        };
        if epoch < start {
            return Ok(self.base_lr);
        }
        let span = self.total_epochs - 1 - start.min(self.total_epochs - 1);
        let progress = match span {
            0 if epoch == 0 => 0.0,
            0 => 1.0,
            _ => (epoch - start) as f64 / span as f64,
        };
        let cos = 0.5 * (1.0 + math::cos(core::f64::consts::PI * progress));
        Ok(self.final_lr + (self.base_lr - self.final_lr) * cos)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub hyper: Hyper,
    pub schedule: LrSchedule,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// Zero-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy over the whole training set after the epoch's
    /// updates.
    pub mean_loss: f64,
    /// Accuracy over the whole training set after the epoch's updates.
    pub train_accuracy: f64,
}

impl fmt::Display for EpochLog {
    /// Tab-separated `key=value` fields in a fixed order; floats use the
    /// shortest representation that parses back exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={}\tlr={:?}\tloss={:?}\ttrain_acc={:?}",
            self.epoch, self.lr, self.mean_loss, self.train_accuracy
        )
    }
}

/// Samples per gradient shard. Shards are reduced in index order, so the
/// result is independent of how many threads evaluate them.
const GRAD_SHARD: usize = 16;

struct ShardResult {
    grads: ModelParams,
    loss: f64,
}

fn shard_gradient(cfg: &ModelConfig, params: &ModelParams, samples: &[Sample], idx: &[usize]) -> Result<ShardResult> {
    let mut grads = ModelParams::zeros(cfg);
    let mut loss = 0.0;
    for &i in idx {
        let s = &samples[i];
        let trace = params.forward_trace(cfg, &s.input)?;
        let (l, gl) = cross_entropy(&trace.logits, s.label)?;
        grads.add_scaled(&params.backward_trace(cfg, &trace, &gl)?, 1.0);
        loss += l;
    }
    Ok(ShardResult { grads, loss })
}

/// Mean gradient and summed loss over the samples at `idx`.
pub fn batch_gradient(cfg: &ModelConfig, params: &ModelParams, samples: &[Sample], idx: &[usize]) -> Result<(ModelParams, f64)> {
    #[cfg(feature = "parallel")]
    let shards: Vec<Result<ShardResult>> = {
        use rayon::prelude::*;
        idx.par_chunks(GRAD_SHARD).map(|c| shard_gradient(cfg, params, samples, c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let shards: Vec<Result<ShardResult>> =
        idx.chunks(GRAD_SHARD).map(|c| shard_gradient(cfg, params, samples, c)).collect();

    let mut total = ModelParams::zeros(cfg);
    let mut loss = 0.0;
    for shard in shards {
        let shard = shard?;
        total.add_scaled(&shard.grads, 1.0);
        loss += shard.loss;
    }
    if !idx.is_empty() {
        total.scale(1.0 / idx.len() as f64);
    }
    Ok((total, loss))
}

pub fn predict(cfg: &ModelConfig, params: &ModelParams, input: &crate::tensor::Matrix) -> Result<usize> {
    let logits = params.logits(cfg, input)?;
    Ok(argmax(&logits))
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn confusion(cfg: &ModelConfig, params: &ModelParams, samples: &[Sample]) -> Result<ConfusionMatrix> {
    Ok(evaluate(cfg, params, samples)?.1)
}

/// Mean cross-entropy and confusion matrix over `samples`.
pub fn evaluate(cfg: &ModelConfig, params: &ModelParams, samples: &[Sample]) -> Result<(f64, ConfusionMatrix)> {
    let mut cm = ConfusionMatrix::new(cfg.classes);
    let mut loss = 0.0;
    for s in samples {
        let logits = params.logits(cfg, &s.input)?;
        loss += cross_entropy(&logits, s.label)?.0;
        cm.accumulate(s.label, argmax(&logits))?;
    }
    Ok((loss / samples.len().max(1) as f64, cm))
}

/// Trains `params` in place with balanced batches. An epoch is
/// `⌈samples / batch_size⌉` batches; the learning rate is set per epoch.
/// `on_epoch` sees every log line as soon as it is produced.
pub fn train(
    cfg: &ModelConfig,
    params: &mut ModelParams,
    samples: &[Sample],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Input("batch size must be at least 1".into()));
    }
    if opts.schedule.total_epochs < opts.epochs {
        return Err(Error::Input(format!(
            "schedule covers {} epochs, training runs {}",
            opts.schedule.total_epochs, opts.epochs
        )));
    }
    params.check_config(cfg)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut batches = BalancedBatches::new(&labels, cfg.classes, opts.batch_size, opts.seed)?;
    let mut state = OptimState::for_model(opts.optimizer, params, opts.hyper);
    let per_epoch = samples.len().div_ceil(opts.batch_size);
    let mut log = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let lr = opts.schedule.lr_at(epoch)?;
        for _ in 0..per_epoch {
            let idx = batches.next_batch();
            let (grads, _) = batch_gradient(cfg, params, samples, &idx)?;
            state.step_model(params, &grads, lr)?;
        }
        let (mean_loss, cm) = evaluate(cfg, params, samples)?;
        let entry = EpochLog { epoch, lr, mean_loss, train_accuracy: cm.accuracy()? };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}
