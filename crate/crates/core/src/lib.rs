//! Prevalence-aware binary classification with quadric boundaries.
//!
//! Boundaries are fitted by minimizing a prevalence-weighted, tanh-smoothed
//! misclassification rate, continuing from a wide smoothing scale down to a
//! nearly sharp one. On top of that sit a classification-free prevalence
//! estimator and jointly fitted, non-crossing boundary families that bound
//! the probability that an individual classification is correct.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); file
//! formats and synthetic data work in `f64`. The aliases below name the
//! common `f64` instantiations.

// `!(x >= lo)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Symmetric and triangular matrix loops read better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod boundary;
pub mod error;
pub mod levelset;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod prevalence;
pub mod scalar;
pub mod synth;

pub use boundary::{
    class_of_value, classify, hyperplane_init, quadric_eval, quadric_grad, BoundaryClassifier,
    QuadricParams,
};
pub use error::{Error, Result};
pub use levelset::{
    default_q_grid, fit_levelsets, local_accuracy, prevalence_function_oracle,
    prevalence_function_query, shadow_grid, uncertainty, LevelSetFamily, UncertaintyBracket,
};
pub use model::{Class, LabeledSample, Measurement, TestPopulation, TrainingPopulation};
pub use objective::{
    empirical_error, scale_regularizer, smoothed_loss, total_loss, ObjectiveConfig,
};
pub use optimizer::{homotopy_run, HomotopyResult, SigmaSchedule};
pub use prevalence::{estimate_prevalence, two_pass_classify, PrevalenceEstimate};
pub use scalar::Scalar;

pub type Quadric = QuadricParams<f64>;
pub type Quadric32 = QuadricParams<f32>;
pub type Point = Measurement<f64>;
pub type Point32 = Measurement<f32>;
pub type Training = TrainingPopulation<f64>;
pub type Training32 = TrainingPopulation<f32>;
pub type Test = TestPopulation<f64>;
pub type Test32 = TestPopulation<f32>;
pub type Family = LevelSetFamily<f64>;
pub type Family32 = LevelSetFamily<f32>;
