//! Simulator for empirical risk minimization when the *features* of every
//! sample are split across agents on a network.
//!
//! Each agent owns one block of the weight vector and the matching columns
//! of the data. Agents cooperate through a doubly stochastic combination
//! matrix to estimate the aggregated score `z_n = Σ_k h_{n,k}ᵀ w_k` that the
//! loss needs, then update their own block.
//!
//! - [`topology`] builds graphs and combination matrices.
//! - [`model`] holds the losses and the ℓ2 regularizer.
//! - [`data`] loads, generates and partitions datasets.
//! - [`diffusion`] implements consensus, score tracking and the pipeline.
//! - [`algorithms`] has the drivers (naive, VRD², PVRD², baselines).
//! - [`harness`] computes the reference minimizer, traces and audits.
//! - [`config`] and [`cli`] expose it all as a JSON-driven command line.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod cli;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod model;
pub mod objective;
pub mod topology;

pub use error::{Error, Result};
