//! Video-language recognition at desk scale: a from-scratch autodiff core, a
//! cross-frame video encoder, a byte-level text tower with video-conditioned
//! prompting, a contrastive objective, data plumbing, an attention cost model
//! and the training loops that tie them together.

pub mod cli;
pub mod config;
pub mod contrastive;
pub mod cost;
pub mod data;
pub mod error;
pub mod nn;
pub mod prompt;
pub mod tensor;
pub mod text;
pub mod train;
pub mod video;

pub use error::{Error, Result};
