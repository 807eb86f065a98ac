//! Metrics, complexity profiling, and report output.

pub mod metrics;
pub mod profile;
pub mod report;
pub mod run;

pub use metrics::{d1, epe, evaluate, kpx, MetricAccumulator, MetricReport};
pub use profile::{count_macs, count_params, profile, profile_model, ComplexityReport, ModuleCost};
pub use run::{evaluate_model, predict_sample, Prediction};
