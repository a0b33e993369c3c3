//! Segmentation with dual-level adversarial domain adaptation.
//!
//! A pyramid segmentation network is trained on a labeled source stain domain
//! while two least-squares patch discriminators align, against an unlabeled
//! target stain domain, the pyramid-pooled representation (image level) and
//! the fused decoder feature (feature level).

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod losses;
pub mod nn;
pub mod tensor;
pub mod training;

pub use config::{load_config, load_config_with_overrides, lr_at_epoch, ExperimentConfig, Variant};
pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod networks;
pub mod rng;
