//! Causal effect estimation from extreme conditional quantiles.
//!
//! With an additive structural equation and a light-tailed error term, the
//! conditional quantile of the error becomes exposure-independent deep in
//! the tail, so contrasting fitted extreme quantiles of the outcome recovers
//! the causal effect even under endogeneity. This crate provides:
//!
//! - [`qr`]: deterministic check-loss, least-squares and two-stage
//!   least-squares solvers;
//! - [`basis`]: intercept-prefixed identity / polynomial / tensor-spline
//!   feature expansion;
//! - [`excel`]: the extreme-quantile effect estimators with tail-side and
//!   tail-index selection heuristics and covariate adjustments;
//! - [`resample`]: bootstrap confidence sets (joint ball and
//!   component-wise intervals);
//! - [`iv_repair`]: union confidence sets built from possibly invalid
//!   instruments anchored by the extreme-quantile interval;
//! - [`scenarios`]: simulation designs and a Monte Carlo harness.
//!
//! Replicated work (bootstrap, Monte Carlo) runs on rayon when the
//! `parallel` feature (default) is enabled; per-task seeds derived from a
//! counter-based stream make results identical across thread counts and
//! with the sequential fallback.

pub mod basis;
pub mod data;
pub mod error;
pub mod excel;
pub mod iv_repair;
pub mod par;
pub mod qr;
pub mod resample;
pub mod rng;
pub mod scenarios;

pub use data::Dataset;
pub use error::{Error, Result};
