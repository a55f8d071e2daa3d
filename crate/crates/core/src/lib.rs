//! Differentially private multi-class linear SVMs.
//!
//! All-in-one (Crammer–Singer / smoothed M³) SVMs touch each training sample
//! once, so the full privacy budget goes to a single classifier instead of
//! being split across `c` one-vs-rest problems. This crate provides:
//!
//! - [`trainers::pmsvm_wp`]: weight perturbation with analytic-Gaussian noise
//!   calibrated to the leave-one-out weight sensitivity,
//! - [`trainers::pmsvm_gp`] / [`trainers::pmsvm_agp`]: DP-SGD (and its Adam
//!   variant) with per-example clipping and Rényi accounting,
//! - one-vs-rest and cross-entropy baselines, and
//! - a multi-seed experiment harness (see [`harness`]) driven by the `pmsvm` CLI.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod privacy;
pub mod trainers;

pub use error::{Error, Result};
