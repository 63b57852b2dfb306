//! Training and evaluation: model assembly for the cross-frame model and the
//! two frame-pooling baselines, the optimizer, checkpoints and metrics.

mod checkpoint;
mod dataset;
mod eval;
mod model;
mod optim;
mod trainer;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{plan_batches, Dataset, Sample};
pub use eval::{evaluate, ClassAccuracy, EvalMode, EvalOptions, EvalReport};
pub use model::{
    baseline_clip_joint, baseline_clip_mean, origin_for, Bound, ClipRepr, Model, ModelConfig,
    PlainVit,
};
pub use optim::{learning_rate, AdamW};
pub use trainer::{gradcheck_model, sampling_mode, EpochMetrics, StepRecord, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    /// Cross-frame communication, temporal integration and prompting.
    Xclip,
    /// Per-frame plain encoder, mean over frames.
    ClipMean,
    /// One attention over every frame's tokens per layer.
    ClipJoint,
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelMode::Xclip => "xclip",
            ModelMode::ClipMean => "clip_mean",
            ModelMode::ClipJoint => "clip_joint",
        })
    }
}

impl FromStr for ModelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xclip" => Ok(ModelMode::Xclip),
            "clip_mean" => Ok(ModelMode::ClipMean),
            "clip_joint" => Ok(ModelMode::ClipJoint),
            _ => Err(Error::Config(format!(
                "unknown model mode `{s}` (xclip|clip_mean|clip_joint)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Similarity against text embeddings.
    Text,
    /// Fully-connected classifier in place of the text tower.
    Linear,
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadMode::Text => "text",
            HeadMode::Linear => "linear",
        })
    }
}

impl FromStr for HeadMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(HeadMode::Text),
            "linear" => Ok(HeadMode::Linear),
            _ => Err(Error::Config(format!(
                "unknown head mode `{s}` (text|linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Learning-rate multiplier for parameters with no image/text ancestry.
    pub fresh_lr_mult: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup: f64,
    pub freeze_image: bool,
    pub freeze_text: bool,
    pub mode: ModelMode,
    pub head: HeadMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 8,
            lr: 1e-3,
            seed: 0,
            fresh_lr_mult: 10.0,
            weight_decay: 1e-3,
            warmup: 0.1,
            freeze_image: false,
            freeze_text: false,
            mode: ModelMode::Xclip,
            head: HeadMode::Text,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, w: &str| Err(Error::Config(format!("{k} {w}")));
        if !(1..=1_000_000).contains(&self.epochs) {
            return bad("train.epochs", "must be in 1..=1000000");
        }
        if !(1..=4096).contains(&self.batch) {
            return bad("train.batch", "must be in 1..=4096");
        }
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return bad("train.lr", "must be in (0, 1]");
        }
        if !(self.fresh_lr_mult > 0.0 && self.fresh_lr_mult <= 1000.0) {
            return bad("train.fresh_lr_mult", "must be in (0, 1000]");
        }
        if !(0.0..=1.0).contains(&self.weight_decay) {
            return bad("train.weight_decay", "must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return bad("train.warmup", "must be in [0, 1)");
        }
        Ok(())
    }
}
