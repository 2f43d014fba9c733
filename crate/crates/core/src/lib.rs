//! Household activity detection from aggregated smart-meter load.
//!
//! The pipeline runs in five stages:
//!
//! * [`ingest`] parses load and weather CSVs onto a common one-minute grid,
//!   bundles appliance sub-meters into activity loads and labels each
//!   clock-hour detection window.
//! * [`features`] turns each 60-sample window into time-domain statistics,
//!   the first ten DFT amplitude bins and the mean temperature.
//! * [`svm`] trains a soft-margin linear SVM on standardized features.
//! * [`eval`] splits chronologically, tallies confusion counts, computes
//!   accuracy/precision/recall and runs the four-way feature ablation.
//! * [`activity_model`] summarizes detected activities as 24-hour occurrence
//!   profiles and an onset-to-onset Markov transition matrix.
//!
//! [`synth`] generates labeled households with planted behavior so the whole
//! loop can be checked against known ground truth. [`pipeline`] wires the
//! stages into file-in, file-out commands.
//!
//! The numerical modules are generic over the scalar type through [`Real`];
//! the aliases below fix it to `f64`, which is what the I/O layers produce.

pub mod activity_model;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod scalar;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
pub use features::Method;
pub use ingest::{ActivityMap, Label, LabelSeries, LoadTable, TemperatureSeries};
pub use scalar::Real;

/// Exact rational scalar used for metric cross-checks.
pub type Rational = num_rational::Ratio<i128>;

pub type FeatureVector = features::FeatureVector<f64>;
pub type FeatureMatrix = features::FeatureMatrix<f64>;
pub type Scaler = features::Scaler<f64>;
pub type WindowRecord = features::WindowRecord<f64>;
pub type SvmModel = svm::SvmModel<f64>;
pub type HourlyProfile = activity_model::HourlyProfile<f64>;
pub type TransitionMatrix = activity_model::TransitionMatrix<f64>;
pub type MetricsReport = eval::MetricsReport<f64>;
pub type ExactMetricsReport = eval::MetricsReport<Rational>;

pub type SvmModelF32 = svm::SvmModel<f32>;
pub type FeatureMatrixF32 = features::FeatureMatrix<f32>;
