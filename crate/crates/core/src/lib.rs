//! Finite-length scaling analysis of LDPC codes over the binary erasure
//! channel.
//!
//! The crate samples Tanner graphs from the configuration model, runs the
//! peeling decoder, computes thresholds and scaling constants from density
//! and covariance evolution, and evaluates and fits the finite-length
//! scaling laws for the block erasure probability.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cache;
pub mod decoder;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod graph;
pub mod linalg;
pub mod scalar;
pub mod scaling;
pub mod stats;
pub mod toywalk;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DegreeDistribution64 = ensemble::DegreeDistribution<f64>;
pub type Ensemble64 = ensemble::Ensemble<f64>;
pub type CriticalPoint64 = ensemble::CriticalPoint<f64>;
pub type AlphaReport64 = asymptotics::AlphaReport<f64>;
pub type ScalingParams64 = scaling::ScalingParams<f64>;
pub type FitProblem64 = fit::FitProblem<f64>;
pub type FitReport64 = fit::FitReport<f64>;

pub type Ensemble32 = ensemble::Ensemble<f32>;
pub type ScalingParams32 = scaling::ScalingParams<f32>;
