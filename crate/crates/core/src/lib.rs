//! Unsupervised anomaly localization by learned restoration of synthetic
//! anomalies.
//!
//! Healthy images are corrupted by blending in content from other healthy
//! images under soft random masks, with a strength that grows along a
//! schedule `t -> alpha_t`. A time-conditioned UNet learns to undo that
//! corruption. At test time the image is healed over a descending sequence
//! of steps and the accumulated absolute residuals form a pixel-wise anomaly
//! score.

pub mod config;
pub mod corruption;
pub mod datasets_io;
pub mod error;
pub mod image;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod restorer;
pub mod schedule;

pub use config::RunConfig;
pub use corruption::{AnomalyMask, CorruptionSample, MaskConfig};
pub use datasets_io::{DatasetManifest, Split};
pub use error::{Error, ErrorKind, Result};
pub use image::Image;
pub use inference::{HealTrace, Restore, ScoreMap, ScoreMode};
pub use metrics::{EvalResult, SeedSummary};
pub use phantom::{AnomalyKind, LabeledTestImage, PhantomSpec};
pub use restorer::{Model, RestorerCheckpoint, RestorerConfig, TrainConfig};
pub use schedule::{Schedule, ScheduleParams};
