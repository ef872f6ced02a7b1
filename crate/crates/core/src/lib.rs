//! Differentially private statistics fed into downstream allocation rules,
//! and the fairness metrics that measure what the noise does to them.
//!
//! The pipeline is: a [`StatMatrix`] of true counts, a privacy mechanism
//! producing a noisy release, an allocator (coverage labels, fund fractions
//! or seats), and metrics computed over a seeded Monte Carlo ensemble.

pub mod allocators;
pub mod error;
pub mod harness;
pub mod io;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod repair;
pub mod rng;

pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, Problem, ProblemParams, RepairSpec};
pub use mechanisms::Mechanism;
pub use metrics::MetricKind;
pub use model::{
    AssigneeId, CoverageLabel, FairnessReport, NoisyRelease, OutcomeVector, QueryId, StatMatrix,
    TrialEnsemble,
};
pub use rng::{NoiseSource, RngStream};
