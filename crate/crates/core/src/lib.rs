//! Knowledge distillation through batch-normalized "perception" logits.
//!
//! Each class column of a logit batch is centered and scaled by its own
//! batch statistics before the usual temperature-softened KL between teacher
//! and student. The crate holds the numeric core (a small row-major matrix,
//! losses with hand-derived gradients, a ReLU MLP with manual backprop), an
//! SGD trainer, a synthetic Gaussian-mixture data generator and a suite of
//! calibration metrics.
//!
//! With the `oracle` feature, [`oracle`] exposes slow, independent reference
//! implementations used by the test suites.

pub mod calibration;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod perception;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use calibration::{CalibrationReport, PredictionSet};
pub use data::{Dataset, MixtureSpec};
pub use error::{Error, Result};
pub use losses::{DistillMode, LossValue};
pub use model::{MlpParams, MlpSpec};
pub use perception::{ClassStats, GradMode};
pub use rng::RngState;
pub use tensor::Matrix;
pub use trainer::{EpochRecord, StatsScope, TrainConfig, TrainOutcome};
