//! Semantic segmentation toolkit: run-length mask codec, imbalance-aware
//! losses with verified gradients, SegNet and U-Net encoder-decoders, and a
//! staged training pipeline that runs on a synthetic shape dataset.

pub mod dataset;
pub mod error;
pub mod losses;
pub mod mask_codec;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
