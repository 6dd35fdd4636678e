//! Class-adaptive self-training toolkit for semi-supervised semantic
//! segmentation.
//!
//! The crate turns predictions of warm-up models on labelled validation
//! folds into two training signals:
//!
//! * per-class confidence thresholds for pseudo-labelling unlabelled images
//!   ([`act`]), searched by raising each class's threshold until its
//!   validation precision reaches a target;
//! * a class-wise oversampling plan for the labelled set ([`aos`]), driven
//!   by how far each class's validation IoU falls below the class mean.
//!
//! Folds come from [`folds`], metrics from [`metrics`], all file I/O goes
//! through [`store`], and [`synth`] provides synthetic scenes with a
//! predictor of known behaviour for end-to-end checks.
//!
//! Numeric types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod act;
pub mod aos;
pub mod error;
pub mod folds;
pub mod metrics;
pub mod scalar;
pub mod seeding;
pub mod store;
pub mod synth;

pub use act::{
    act_step, aggregate_thresholds, argmax_label, pseudo_label, run_act, run_act_samples, ActConfig, ActReport,
    ActSample, ClassThresholds, ThresholdsReport, Top1Map,
};
pub use aos::{aos_plan, materialize, mean_scores, sampling_threshold, ClassScores, OversamplingPlan, PlanReport};
pub use error::{Error, Result};
pub use folds::{build_folds, default_n_v, FoldSpec};
pub use metrics::{ClassIoU, ClassPrecision, ConfusionAccumulator, ScoresReport};
pub use scalar::Scalar;
pub use store::{DatasetManifest, LabelMap, ProbabilityMap, SampleEntry};

pub type ProbabilityMapF32 = ProbabilityMap<f32>;
pub type ProbabilityMapF64 = ProbabilityMap<f64>;
pub type ClassThresholdsF32 = ClassThresholds<f32>;
pub type ClassThresholdsF64 = ClassThresholds<f64>;
pub type ActConfigF32 = ActConfig<f32>;
pub type ActConfigF64 = ActConfig<f64>;
pub type ActReportF64 = ActReport<f64>;
pub type ClassPrecisionF64 = ClassPrecision<f64>;
pub type ClassIoUF64 = ClassIoU<f64>;
pub type ClassScoresF64 = ClassScores<f64>;
pub type OversamplingPlanF64 = OversamplingPlan<f64>;
