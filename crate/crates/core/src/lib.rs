//! Pose-consistent multi-positive contrastive pre-training at desk scale.
//!
//! The pipeline generates groups of appearance-varying images that share one
//! human pose, then pre-trains a small masked-autoencoder vision transformer
//! with three objectives: masked-patch reconstruction, [CLS] alignment across
//! two masked views of the same image, and a multi-positive contrastive loss
//! that pulls [POSE] tokens of same-pose images together.

pub mod augment;
pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod error;
pub mod imaging;
pub mod manifest;
pub mod masking;
pub mod pose;
pub mod rng;
pub mod sample;

pub use config::{load_config, ModelConfig, TrainConfig, Variant};
pub use error::{Error, Result};
pub use imaging::ImageBuf;
pub use manifest::{DatasetManifest, ManifestEntry};
pub use masking::PatchMask;
pub use pose::PoseLabel;
pub use rng::{seeded_rng, RngStream};
pub use sample::SampleGroup;
