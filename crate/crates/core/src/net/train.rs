use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::TrainingSample;
use super::model::{ArchSpec, Mode, NetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_final: f64,
    pub epochs: usize,
    pub batch: usize,
    /// l2 weight on the filters.
    pub lambda: f64,
    pub seed: u64,
    /// Rescale each step so the global gradient norm is at most this; 0 is off.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_final: 1e-7,
            epochs: 200,
            batch: 16,
            lambda: 1e-4,
            seed: 0,
            clip_norm: 0.0,
        }
    }
}

impl TrainConfig {
    /// Schedule for the desk layout: a from-scratch net needs a far larger
    /// step than the full-size schedule to converge within minutes.
    pub fn desk() -> Self {
        Self {
            lr0: 3e-2,
            lr_final: 3e-4,
            epochs: 60,
            clip_norm: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr_final > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::invalid("clip_norm must be >= 0"));
        }
        Ok(())
    }

    /// `lr0 (lr_final / lr0)^(e / epochs)`, exactly `lr_final` at `e = epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.epochs {
            return self.lr_final;
        }
        self.lr0 * (self.lr_final / self.lr0).powf(epoch as f64 / self.epochs as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub loss_trace: Vec<f64>,
    /// Inference-mode validation loss after every epoch (empty without a
    /// validation set).
    pub val_trace: Vec<f64>,
}

fn batch_tensors(samples: &[&TrainingSample]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut t = Vec::new();
    for s in samples {
        x.extend_from_slice(&s.input);
        t.extend_from_slice(&s.target);
    }
    (x, t)
}

fn check_samples(samples: &[TrainingSample], arch: &ArchSpec) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::invalid("training set is empty"))?;
    let te = first.te;
    for s in samples {
        if s.te != te || s.input.len() != arch.in_channels * te * arch.rx || s.target.len() != arch.out_channels * te {
            return Err(Error::dims("training sample does not match the architecture"));
        }
    }
    Ok(te)
}

/// Mean inference-mode data loss (no regulariser).
pub fn evaluate_loss(params: &NetworkParams, samples: &[TrainingSample]) -> Result<f64> {
    let te = check_samples(samples, &params.arch)?;
    let mut total = 0.0;
    for chunk in samples.chunks(64) {
        let refs: Vec<&TrainingSample> = chunk.iter().collect();
        let (x, t) = batch_tensors(&refs);
        let out = params.forward_batch(&x, chunk.len(), te, Mode::Infer)?;
        total += out.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

/// SGD with the exponential learning-rate schedule and optional norm
/// clipping, starting from
/// `params`. Shuffling uses one ChaCha stream per epoch.
pub fn train_from(
    mut params: NetworkParams,
    samples: &[TrainingSample],
    val: &[TrainingSample],
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainReport)> {
    cfg.validate()?;
    let te = check_samples(samples, &params.arch)?;
    if !val.is_empty() {
        check_samples(val, &params.arch)?;
    }
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch) {
            let refs: Vec<&TrainingSample> = idx.iter().map(|&i| &samples[i]).collect();
            let (x, t) = batch_tensors(&refs);
            let (loss, grads, stats) = params.loss_and_grad(&x, &t, refs.len(), te, cfg.lambda, Mode::Train)?;
            if !loss.is_finite() {
                report.loss_trace.push(loss);
                return Err(Error::numerical(format!(
                    "training diverged in epoch {epoch}; loss trace {:?}",
                    report.loss_trace
                )));
            }
            let norm = grads.tensors.iter().flatten().map(|d| d * d).sum::<f64>().sqrt();
            let step = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm { lr * cfg.clip_norm / norm } else { lr };
            for (p, g) in params.trainable_mut().into_iter().zip(&grads.tensors) {
                p.iter_mut().zip(g).for_each(|(v, d)| *v -= step * d);
            }
            params.update_running_stats(&stats);
            epoch_loss += loss;
            batches += 1;
        }
        report.loss_trace.push(epoch_loss / batches as f64);
        if !val.is_empty() {
            report.val_trace.push(evaluate_loss(&params, val)?);
        }
    }
    Ok((params, report))
}

/// Xavier-initialised training run.
pub fn train(
    samples: &[TrainingSample],
    val: &[TrainingSample],
    arch: ArchSpec,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainReport)> {
    let params = NetworkParams::xavier(arch, cfg.seed)?;
    train_from(params, samples, val, cfg)
}
