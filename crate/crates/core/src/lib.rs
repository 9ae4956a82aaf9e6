//! Two-stage supervised-contrastive multimodal classifier over precomputed
//! image, text and audio features, with emotion/sentiment and caption
//! side channels.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the pipeline and command-line tool use.

pub mod config;
pub mod contrastive;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod run;
pub mod scalar;
pub mod synthgen;
pub mod training;

pub use config::{ModelConfig, RunConfig};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = nn::Matrix<f64>;
pub type DenseLayer64 = nn::DenseLayer<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type Batch64 = model::Batch<f64>;
pub type Matrix32 = nn::Matrix<f32>;
pub type ModelParams32 = model::ModelParams<f32>;
