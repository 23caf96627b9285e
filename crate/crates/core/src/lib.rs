// SPDX-License-Identifier: Apache-2.0

//! Simulator of neural-network training on charge-trap-flash resistive
//! processing units.
//!
//! The crate is layered bottom-up:
//!
//! - [`device`]: per-pulse threshold-voltage model and its calibration
//! - [`pulse`]: compensation pulse schemes and their latency
//! - [`stochastic`]: bit trains, train application, update statistics and
//!   the error-floor decomposition
//! - [`dataset`]: IDX image/label files
//! - [`trainer`]: the 784-hidden-10 network with crossbar weight updates
//! - [`metrics`]: per-sample energy and latency, comparative tables
//! - [`fixture`]: the default device calibration
//! - [`experiment`]: configuration documents and the experiment runner

// `!(x > 0.0)` is how validation rejects NaN along with the bad range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod device;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod fixture;
pub mod metrics;
pub mod pulse;
pub mod rng;
pub mod stochastic;
pub mod trainer;

pub use error::{Error, Result};
