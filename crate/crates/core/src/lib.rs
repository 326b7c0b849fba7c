//! White-blood-cell classification benchmark.
//!
//! Trains CNN variants on RaabinWBC-style manifests, evaluates them in-domain
//! and under a cross-dataset shift, and provides the model surgery (batch norm
//! to group norm, frozen batch norm, partial fine-tuning) used to study how
//! batch normalization behaves under domain shift. A synthetic two-domain
//! dataset and a tiny CNN make the whole pipeline runnable on a CPU.

pub mod analysis;
pub mod datasets;
pub mod error;
pub mod evaluator;
pub mod modelzoo;
pub mod nn;
pub mod normalization;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
