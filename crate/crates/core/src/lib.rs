//! Desk-scale laboratory for distribution collapse in policy-gradient
//! training with verifiable rewards.
//!
//! The crate has three layers:
//!
//! - closed-form theory over finite mode spaces ([`mode_space`],
//!   [`theory`]): exponentially tilted policies, the batch partition
//!   function and its lower bounds, geometric interpolation, and the
//!   moderate/over-sharpening classifier;
//! - training machinery ([`advantage`], [`policy`], [`coupling`],
//!   [`dlc`]): group advantage estimators with inverse-success
//!   calibration, softmax policies with sampled policy gradients and
//!   three optimizers, gradient-kernel bounds on cross-query coupling,
//!   and the memory-calibrated sampler;
//! - experiments ([`harness`], [`verify`]): seeded, bit-reproducible
//!   simulation runs with collapse metrics and CSV output, plus the
//!   randomized oracle suite that checks the theory numerically.

pub mod advantage;
pub mod coupling;
pub mod dlc;
pub mod error;
pub mod harness;
pub mod mode_space;
pub mod policy;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
pub use mode_space::{
    classify_sharpening, AdvantageSpec, Distribution, ModeLabel, ModeSpace, QueryEmbedding,
    Sharpening,
};
pub use theory::{
    batch_optimal_policy, empirical_objective, geometric_interpolation, optimal_policy,
    z_prime_report, BatchCounts, BinaryStats, TiltedPolicy, ZPrimeReport,
};
