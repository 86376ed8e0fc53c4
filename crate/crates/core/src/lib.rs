//! Stochastic momentum methods with rate certificates.
//!
//! Heavy ball, Nesterov's accelerated gradient and its projected variant are
//! simulated under additive gradient noise. Around them sit matrix-inequality
//! rate certificates, closed-form constants, exact Gaussian analysis for
//! quadratics and weighted Wasserstein contraction checks.
//!
//! With the default `parallel` feature Monte Carlo paths run on rayon;
//! without it [`harness::Execution::Parallel`] falls back to a serial loop.
//! Both produce identical results.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod engines;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod linalg;
pub mod problems;
pub mod stats;
pub mod transport;

pub use certificates::{CertificatePair, Preset};
pub use engines::{Method, MomentumParams, StateVec};
pub use error::{Error, Result};
pub use harness::{run_experiment, AggregateResult, Execution, ExperimentConfig};
pub use linalg::{Matrix, SymMatrix};
pub use problems::{ConstraintSet, NoiseOracle, Objective, QuadraticObjective};
