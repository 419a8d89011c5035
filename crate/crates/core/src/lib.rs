//! Probabilistically plausible counterfactual explanations for
//! differentiable tabular classifiers.
//!
//! A counterfactual `x'` for an input `x0` is found by gradient descent on
//! `d(x0, x') + λ (ℓ_validity + ℓ_plausibility)`, where the plausibility hinge
//! compares the log-density of a class-conditional masked autoregressive flow
//! against a per-class median threshold.

pub mod autodiff;
pub mod data;
pub mod density;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod ppcef;

pub use error::{Error, Result};
