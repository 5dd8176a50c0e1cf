//! Training-set reduction (TSR) toolkit.
//!
//! Shrinks a labelled training set to a small, class-balanced subset whose
//! training and validation loss curves track those of full-size training, and
//! scores that tracking by fitting parametric models to the curves and
//! comparing the fitted parameters.
//!
//! The crate is split along the workflow:
//!
//! - [`dataset`]: loading, synthetic generation, stratified splitting and
//!   per-class quota apportionment.
//! - [`nnet`]: a small deterministic feed-forward engine (dense, conv, max-pool)
//!   with MSE / cross-entropy, backprop, mini-batch SGD and loss-curve recording.
//! - [`reduction`]: random, distance-based (per-class k-means) and loss-based
//!   (initial-loss profiling) subset selection.
//! - [`curves`]: negative-exponential and degree-5 polynomial fits plus the
//!   fitted-parameter similarity score.
//! - [`harness`]: the strategy × size experiment grid and its report files.

pub mod curves;
pub mod dataset;
pub mod harness;
pub mod nnet;
pub mod reduction;
pub mod rng;

pub use curves::{CurveModel, FitOutcome, Similarity, SimilarityScore};
pub use dataset::{ClassDistribution, Dataset, QuotaPlan, Sample, Shape};
pub use harness::{ExperimentConfig, ExperimentResult, SimilarityTable};
pub use nnet::{LossCurve, LossKind, NetworkSpec, Parameters, TrainConfig};
pub use reduction::{ReductionPlan, Strategy};
