//! Reliability scoring for model prediction logs.
//!
//! Given line-delimited prediction logs produced by any external model
//! harness, this crate computes three normalized reliability pillars and
//! their weighted combination:
//!
//! - **Calibration (C)** — expected calibration error, Brier score, and
//!   negative log-likelihood, plus post-hoc temperature scaling and
//!   isotonic regression ([`calibration`]).
//! - **Robustness (R)** — accuracy retention under perturbed input
//!   conditions ([`robustness`]).
//! - **Uncertainty (U)** — error-detection AUROC over per-item variance
//!   of stochastic prediction samples ([`uncertainty`]).
//!
//! The [`aggregate`] module combines the pillars into a composite
//! reliability score with tier assignment, bootstrap confidence
//! intervals, weight-sensitivity sweeps, and leave-one-dataset-out
//! analysis. [`perturb`] generates deterministic perturbed question
//! variants, [`synth`] generates synthetic logs with analytically known
//! properties, and [`pipeline`] orchestrates a full scoring run.

pub mod aggregate;
pub mod calibration;
pub mod config;
mod error;
pub mod fixtures;
pub mod perturb;
pub mod pipeline;
pub mod record;
pub mod rng;
pub mod robustness;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
