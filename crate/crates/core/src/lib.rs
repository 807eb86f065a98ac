//! Knowledge distillation for stereo matching networks.
//!
//! A compact stereo network family (shared 2-D feature extractor,
//! group-wise correlation cost volume, 3-D encoder–decoder aggregation,
//! soft-argmin regression), the losses and training loop that transfer
//! knowledge from a larger teacher at five points, synthetic and on-disk
//! datasets, and the metrics and complexity profiler used to evaluate them.

pub mod aggregation;
pub mod backbone;
pub mod config;
pub mod costvolume;
pub mod data;
pub mod distill;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod nn;
pub mod regression;
pub mod tensor;

pub use config::{
    default_objective_weights, preset, BackboneVariant, LossAssignment, LossKind, ModelConfig, ObjectiveWeights,
    TeacherSpec, Term, TrainConfig,
};
pub use error::{Error, Result};
pub use model::{ModelOutput, StereoNet};
pub use regression::Mode;
pub use tensor::Tensor;
