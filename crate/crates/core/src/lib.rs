//! Probabilistic human trajectory prediction.
//!
//! A stacked LSTM encodes an ego-frame observation window and a mixture
//! density head emits, for every forecast step, a mixture of bivariate
//! Gaussians. The crate also ships the evaluation tooling used to judge
//! such forecasts: Monte-Carlo confidence levels, confidence sets and their
//! areas, calibration curves with reliability scores, and best-of-K
//! displacement errors.
//!
//! Module map:
//!
//! * [`geometry`] world/ego transforms, spline resampling, sample windows
//! * [`mdn`] mixture activations, density, NLL and sampling
//! * [`model`] LSTM + MDN head, gradients, ADAM training, checkpoints
//! * [`uncertainty`] confidence levels, confidence sets, sharpness
//! * [`metrics`] calibration curves, reliability scores, minADE/minFDE
//! * [`data`] trajectory CSV ingestion, splits, synthetic generator

pub mod data;
pub mod error;
mod fastmath;
pub mod geometry;
pub mod mdn;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod spline;
pub mod synth;
pub mod trajectory_csv;
pub mod uncertainty;

pub use error::{Error, Result};
pub use geometry::{AnchorPose, EgoSample, Track, TrackPoint};
pub use mdn::{GaussComponent, MixtureForecast};
pub use model::{ModelConfig, ModelParams, TrainConfig};
