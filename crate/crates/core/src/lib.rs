//! Weakly supervised semantic segmentation from image-level labels with a
//! patch-token transformer, adaptive-K pooling and patch contrastive
//! learning.
//!
//! The pipeline, in order: [`patchify`] cuts images into patch tokens,
//! [`encoder`] embeds and refines them, [`head`] scores patches and pools
//! them into image-level predictions, [`losses`] and [`pcl`] define the
//! training objective, [`decoder`] predicts pixel masks that [`crf`] can
//! refine, and [`train`] / [`eval`] / [`ablation`] drive experiments.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod crf;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod head;
pub mod losses;
pub mod model;
pub mod nn;
pub mod patchify;
pub mod pcl;
pub mod train;

pub use error::{Error, Result};
pub use head::{adaptive_k_select, pool, PoolingConfig, PoolingMode};
pub use losses::{mce_loss, seg_loss, total_loss, LossWeights};
pub use model::{Model, ModelConfig};
pub use pcl::pce_loss;
pub use train::{train, MetricsReport, TrainConfig};
