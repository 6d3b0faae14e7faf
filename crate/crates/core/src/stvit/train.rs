//! Mini-batch Adam training with validation-based early stopping.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_sse, loss_and_grad};
use super::params::{init_params, StVitConfig, StVitParams};
use super::StVitError;
use crate::dataset::{crop_rng, Dataset, WindowSample};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Supplies training samples; `epoch` lets implementations re-draw
/// augmentations deterministically.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn sample(&self, index: usize, epoch: usize) -> Result<WindowSample, StVitError>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [WindowSample] {
    fn len(&self) -> usize {
        <[WindowSample]>::len(self)
    }

    fn sample(&self, index: usize, _epoch: usize) -> Result<WindowSample, StVitError> {
        Ok(self[index].clone())
    }
}

impl SampleSource for Vec<WindowSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize, epoch: usize) -> Result<WindowSample, StVitError> {
        self.as_slice().sample(index, epoch)
    }
}

/// Random `crop × crop` regions of the windows at `starts`, re-drawn every
/// epoch from `(seed, epoch, index)`.
pub struct CroppedWindows<'a> {
    pub dataset: &'a Dataset,
    pub starts: Vec<usize>,
    pub crop: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub seed: u64,
}

impl SampleSource for CroppedWindows<'_> {
    fn len(&self) -> usize {
        self.starts.len()
    }

    fn sample(&self, index: usize, epoch: usize) -> Result<WindowSample, StVitError> {
        let mut rng = crop_rng(self.seed, epoch, index);
        Ok(self
            .dataset
            .random_crop(self.starts[index], self.crop, self.t_in, self.t_out, &mut rng)?)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut StVitParams, grad: &StVitParams) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let g = grad.flat();
        let mut i = 0;
        for t in params.tensors_mut() {
            for p in t.data.iter_mut() {
                self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
                self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                i += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
    TimeBudget,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Last epoch run (0-based).
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// Loss trajectory without wall-clock, for reproducibility checks.
    pub fn trajectory(&self) -> Vec<(usize, u64, u64)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss.to_bits(), e.val_loss.to_bits()))
            .collect()
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop before an epoch that would likely end past this much wall-clock.
    pub time_budget: Option<Duration>,
}

/// Mean squared error over `samples`, weighting every unmasked cell-hour
/// equally.
pub fn evaluate_loss(params: &StVitParams, config: &StVitConfig, samples: &[WindowSample]) -> Result<f64, StVitError> {
    let (mut total, mut m) = (0.0, 0usize);
    for chunk in samples.chunks(config.batch_size.max(1)) {
        let (e, k) = batch_sse(params, config, chunk)?;
        total += e;
        m += k;
    }
    Ok(total / m as f64)
}

pub fn train(
    config: &StVitConfig,
    train_set: &(impl SampleSource + ?Sized),
    val_set: &[WindowSample],
) -> Result<(StVitParams, TrainReport), StVitError> {
    train_with(config, train_set, val_set, &TrainOptions::default(), |_| {})
}

pub fn train_with(
    config: &StVitConfig,
    train_set: &(impl SampleSource + ?Sized),
    val_set: &[WindowSample],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(StVitParams, TrainReport), StVitError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(StVitError::EmptySplit);
    }
    let mut params = init_params(config, config.seed)?;
    let mut adam = Adam::new(params.n_params(), config.lr);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut wait = 0usize;
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let started = Instant::now();
    let mut stop_reason = StopReason::MaxEpochs;
    let report = |epochs: &[EpochRecord], best: &(f64, StVitParams, usize), reason| TrainReport {
        epochs: epochs.to_vec(),
        stopped_epoch: epochs.last().map_or(0, |e| e.epoch),
        best_epoch: best.2,
        best_val_loss: best.0,
        stop_reason: reason,
    };

    for epoch in 0..config.max_epochs {
        if let (Some(budget), Some(last)) = (options.time_budget, epochs.last()) {
            if started.elapsed().as_secs_f64() + last.seconds > budget.as_secs_f64() {
                stop_reason = StopReason::TimeBudget;
                break;
            }
        }
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut sse, mut count) = (0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = idx
                .iter()
                .map(|&i| train_set.sample(i, epoch))
                .collect::<Result<Vec<_>, _>>()?;
            let m: usize = batch.iter().map(|s| s.n_valid() * config.t_out).sum();
            let (loss, grad) = match loss_and_grad(&params, config, &batch) {
                Ok(r) => r,
                Err(StVitError::NonFiniteLoss { .. }) => {
                    return Err(StVitError::Diverged {
                        epoch,
                        batch: b,
                        report: Box::new(report(&epochs, &best, StopReason::Diverged)),
                    })
                }
                Err(e) => return Err(e),
            };
            sse += loss * m as f64;
            count += m;
            adam.step(&mut params, &grad);
        }
        let val_loss = evaluate_loss(&params, config, val_set)?;
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(StVitError::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                report: Box::new(report(&epochs, &best, StopReason::Diverged)),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: sse / count as f64,
            val_loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);

        if val_loss < best.0 - config.min_delta {
            best = (val_loss, params.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    let rep = report(&epochs, &best, stop_reason);
    Ok((best.1, rep))
}
