//! Mini-batch ADAM training with a linearly decaying learning rate.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::geometry::EgoSample;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// When non-empty, every mini-batch is truncated to an input length drawn
    /// uniformly from this list, so one model learns several observation
    /// horizons. Lengths longer than a sample's input are clamped.
    pub input_lengths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-3,
            lr_final: 1e-7,
            epochs: 2500,
            batch_size: 1024,
            seed: 0,
            clip_norm: Some(5.0),
            input_lengths: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final > 0.0 && self.lr_init >= self.lr_final && self.lr_init.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need lr_init >= lr_final > 0, got {} and {}",
                self.lr_init, self.lr_final
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        if self.input_lengths.iter().any(|&l| l < 2) {
            return Err(Error::InvalidConfig(
                "input lengths must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (zero-based): linear from `lr_init` at the first
/// epoch to `lr_final` at the last.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.lr_init;
    }
    let frac = epoch.min(cfg.epochs - 1) as f64 / (cfg.epochs - 1) as f64;
    if frac >= 1.0 {
        return cfg.lr_final;
    }
    cfg.lr_init + (cfg.lr_final - cfg.lr_init) * frac
}

/// ADAM with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    /// Mean NLL on the evaluation set with the epoch's final weights.
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochLog>,
}

/// Training stopped on a numerical failure. Carries the weights from the end
/// of the last completed epoch.
#[derive(Debug)]
pub struct TrainAborted {
    pub error: Error,
    pub epoch: usize,
    pub last_good: ModelParams,
    pub history: Vec<EpochLog>,
}

impl fmt::Display for TrainAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "training aborted in epoch {}: {}",
            self.epoch, self.error
        )
    }
}

impl std::error::Error for TrainAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn global_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Trains `init` on `data`. Each epoch reshuffles the samples with a stream
/// derived from `cfg.seed`, so runs are reproducible bit for bit.
pub fn train(
    init: ModelParams,
    data: &[EgoSample],
    cfg: &TrainConfig,
    eval_data: &[EgoSample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> std::result::Result<TrainOutcome, Box<TrainAborted>> {
    let mut params = init;
    let mut history = Vec::with_capacity(cfg.epochs);
    let abort = |error, epoch, last_good, history| {
        Box::new(TrainAborted {
            error,
            epoch,
            last_good,
            history,
        })
    };
    if let Err(e) = cfg.validate() {
        return Err(abort(e, 0, params, history));
    }
    if data.is_empty() {
        return Err(abort(Error::EmptyDataset, 0, params, history));
    }

    let mut adam = Adam::new(params.num_params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last_good = params.clone();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        let mut len_rng = rng::stream(cfg.seed, "input-length", epoch as u64);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<EgoSample> = if cfg.input_lengths.is_empty() {
                chunk.iter().map(|&i| data[i].clone()).collect()
            } else {
                let len = cfg.input_lengths[len_rng.gen_range(0..cfg.input_lengths.len())];
                chunk.iter().map(|&i| data[i].truncate_input(len)).collect()
            };
            let (loss, mut grad) = match params.loss_and_grad(&batch) {
                Ok(v) => v,
                Err(e) => return Err(abort(e, epoch, last_good, history)),
            };
            if let Some(clip) = cfg.clip_norm {
                let norm = global_norm(&grad);
                if !norm.is_finite() {
                    return Err(abort(
                        Error::NumericalDivergence { horizon: 0 },
                        epoch,
                        last_good,
                        history,
                    ));
                }
                if norm > clip {
                    let s = clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam.update(params.values_mut(), &grad, lr);
            loss_sum += loss * batch.len() as f64;
        }
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(abort(
                Error::NumericalDivergence { horizon: 0 },
                epoch,
                last_good,
                history,
            ));
        }
        let eval_loss = if eval_data.is_empty() {
            None
        } else {
            match params.loss(eval_data) {
                Ok(l) => Some(l),
                Err(e) => return Err(abort(e, epoch, last_good, history)),
            }
        };
        let log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / data.len() as f64,
            eval_loss,
        };
        on_epoch(&log);
        history.push(log);
        last_good.values_mut().copy_from_slice(params.values());
    }
    Ok(TrainOutcome { params, history })
}
