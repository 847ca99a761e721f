//! Stacked LSTM encoder with a mixture density head.
//!
//! The encoder consumes the ego-frame `(x, y, vx, vy)` sequence from a zero
//! initial state. The top layer's final hidden state feeds a single affine
//! head that emits `6 * M` raw values for each of the `m` forecast horizons;
//! [`crate::mdn::activate`] turns those into mixture components.
//!
//! All weights live in one flat vector described by a [`ParamLayout`], which
//! keeps the optimizer, gradient checks and checkpoint code shape-agnostic.

mod checkpoint;
mod linalg;
mod lstm;
mod train;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::EgoSample;
use crate::mdn::{self, ActivationConfig, MixtureForecast, PARAMS_PER_COMPONENT};
use crate::rng;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use train::{lr_at_epoch, train, Adam, EpochLog, TrainAborted, TrainConfig, TrainOutcome};

/// Input features per step: x, y, vx, vy.
pub const INPUT_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_components: usize,
    pub num_horizons: usize,
    /// Sample period of inputs and forecast steps (s).
    pub dt: f64,
    pub activation: ActivationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: INPUT_DIM,
            hidden_dim: 64,
            num_layers: 8,
            num_components: 3,
            num_horizons: 48,
            dt: 0.1,
            activation: ActivationConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim != INPUT_DIM {
            return Err(Error::ModelShape(format!(
                "input_dim must be {INPUT_DIM}, got {}",
                self.input_dim
            )));
        }
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_horizons == 0 {
            return Err(Error::ModelShape(
                "hidden_dim, num_layers and num_horizons must be positive".into(),
            ));
        }
        if !(1..=16).contains(&self.num_components) {
            return Err(Error::ModelShape(format!(
                "num_components must be in 1..=16, got {}",
                self.num_components
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::ModelShape(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        self.activation.validate()
    }

    /// Raw head outputs per horizon.
    pub fn horizon_width(&self) -> usize {
        PARAMS_PER_COMPONENT * self.num_components
    }

    pub fn head_width(&self) -> usize {
        self.num_horizons * self.horizon_width()
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Name, shape and offset of one weight tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every tensor for a given [`ModelConfig`].
///
/// Per LSTM layer `l`: `lstm.l.w_ih [in, 4H]`, `lstm.l.w_hh [H, 4H]`,
/// `lstm.l.bias [4H]`, gate column order input, forget, cell, output.
/// Then `head.w [H, m*6M]` and `head.bias [m*6M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec {
                name,
                shape,
                offset,
            };
            offset += spec.len();
            tensors.push(spec);
        };
        let h = cfg.hidden_dim;
        for l in 0..cfg.num_layers {
            push(
                format!("lstm.{l}.w_ih"),
                vec![cfg.layer_input_dim(l), 4 * h],
            );
            push(format!("lstm.{l}.w_hh"), vec![h, 4 * h]);
            push(format!("lstm.{l}.bias"), vec![4 * h]);
        }
        push("head.w".into(), vec![h, cfg.head_width()]);
        push("head.bias".into(), vec![cfg.head_width()]);
        Self {
            tensors,
            total: offset,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub(crate) fn lstm(&self, layer: usize) -> [&TensorSpec; 3] {
        let i = 3 * layer;
        [&self.tensors[i], &self.tensors[i + 1], &self.tensors[i + 2]]
    }

    pub(crate) fn head(&self) -> [&TensorSpec; 2] {
        let n = self.tensors.len();
        [&self.tensors[n - 2], &self.tensors[n - 1]]
    }
}

/// Architecture plus all trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ModelParams {
    /// All-zero weights.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let values = vec![0.0; layout.total()];
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    /// Xavier-uniform weights with the head tied across horizons, zero biases
    /// except the forget gates (1.0).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng::stream(seed, "init", 0);
        let h = config.hidden_dim;
        let per_horizon = config.horizon_width();
        for spec in params.layout.tensors.clone() {
            let slice = &mut params.values[spec.range()];
            if spec.name == "head.w" {
                // Every horizon starts from the same columns, so component
                // roles line up across horizons.
                let (fan_in, fan_out) = (spec.shape[0], spec.shape[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for row in slice.chunks_mut(fan_out) {
                    let first: Vec<f64> = (0..per_horizon)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    for block in row.chunks_mut(per_horizon) {
                        block.copy_from_slice(&first);
                    }
                }
            } else if let [fan_in, fan_out] = spec.shape[..] {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                slice
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-limit..limit));
            } else if spec.name.starts_with("lstm.") {
                slice[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        Ok(params)
    }

    /// Rebuilds parameters from a flat vector in [`ParamLayout`] order.
    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if values.len() != layout.total() {
            return Err(Error::ModelShape(format!(
                "expected {} weights, got {}",
                layout.total(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelShape("non-finite weight".into()));
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// Weights of the named tensor.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.values[t.range()])
    }

    /// Mixture forecast for one input sequence (oldest step first).
    pub fn forward(&self, input: &[[f64; 4]]) -> Result<MixtureForecast> {
        Ok(self.forward_batch(&[input])?.remove(0))
    }

    /// Forecasts for several sequences. Sequences of different lengths are
    /// processed in separate equal-length groups; output order matches input.
    pub fn forward_batch(&self, inputs: &[&[[f64; 4]]]) -> Result<Vec<MixtureForecast>> {
        let raw = self.raw_outputs(inputs)?;
        let width = self.config.horizon_width();
        raw.iter()
            .map(|r| {
                let horizons = r
                    .chunks_exact(width)
                    .map(|block| mdn::activate(block, &self.config.activation))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MixtureForecast {
                    dt: self.config.dt,
                    horizons,
                })
            })
            .collect()
    }

    /// Pre-activation head outputs, one row of `m * 6M` values per input.
    pub fn raw_outputs(&self, inputs: &[&[[f64; 4]]]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); inputs.len()];
        for (len, idx) in group_by_len(inputs.iter().map(|s| s.len())) {
            self.check_input_len(len)?;
            let batch: Vec<&[[f64; 4]]> = idx.iter().map(|&i| inputs[i]).collect();
            check_finite(&batch)?;
            let raw = lstm::infer(self, &batch);
            let width = self.config.head_width();
            for (row, &i) in raw.chunks_exact(width).zip(&idx) {
                out[i] = row.to_vec();
            }
        }
        Ok(out)
    }

    fn check_input_len(&self, len: usize) -> Result<()> {
        if len < 2 {
            return Err(Error::ModelShape(format!(
                "input sequence needs at least 2 steps, got {len}"
            )));
        }
        Ok(())
    }

    /// Batch-mean NLL and its gradient with respect to every weight.
    pub fn loss_and_grad(&self, batch: &[EgoSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::ModelShape("empty batch".into()));
        }
        let mut grad = vec![0.0; self.values.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (len, idx) in group_by_len(batch.iter().map(|s| s.input.len())) {
            self.check_input_len(len)?;
            let group: Vec<&EgoSample> = idx.iter().map(|&i| &batch[i]).collect();
            for s in &group {
                if s.future_gt.len() != self.config.num_horizons {
                    return Err(Error::HorizonMismatch {
                        expected: self.config.num_horizons,
                        actual: s.future_gt.len(),
                    });
                }
            }
            let inputs: Vec<&[[f64; 4]]> = group.iter().map(|s| s.input.as_slice()).collect();
            check_finite(&inputs)?;
            let gts: Vec<&[[f64; 2]]> = group.iter().map(|s| s.future_gt.as_slice()).collect();
            total += lstm::loss_and_grad(self, &inputs, &gts, scale, &mut grad)?;
        }
        Ok((total * scale, grad))
    }

    /// Batch-mean NLL without gradients.
    pub fn loss(&self, batch: &[EgoSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::ModelShape("empty batch".into()));
        }
        let inputs: Vec<&[[f64; 4]]> = batch.iter().map(|s| s.input.as_slice()).collect();
        let raw = self.raw_outputs(&inputs)?;
        let width = self.config.horizon_width();
        let mut total = 0.0;
        for (r, s) in raw.iter().zip(batch) {
            if s.future_gt.len() != self.config.num_horizons {
                return Err(Error::HorizonMismatch {
                    expected: self.config.num_horizons,
                    actual: s.future_gt.len(),
                });
            }
            let mut scratch = vec![0.0; width];
            for (h, (block, &gt)) in r.chunks_exact(width).zip(&s.future_gt).enumerate() {
                let l = mdn::horizon_nll_with_grad(
                    block,
                    gt,
                    &self.config.activation,
                    0.0,
                    &mut scratch,
                );
                if !l.is_finite() {
                    return Err(Error::NumericalDivergence { horizon: h });
                }
                total += l;
            }
        }
        Ok(total / batch.len() as f64)
    }
}

fn check_finite(inputs: &[&[[f64; 4]]]) -> Result<()> {
    if inputs
        .iter()
        .flat_map(|s| s.iter().flatten())
        .any(|v| !v.is_finite())
    {
        return Err(Error::ModelShape("non-finite input feature".into()));
    }
    Ok(())
}

/// Groups indices by sequence length, in order of first appearance.
fn group_by_len(lens: impl Iterator<Item = usize>) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, len) in lens.enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == len) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((len, vec![i])),
        }
    }
    groups
}
