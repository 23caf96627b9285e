// SPDX-License-Identifier: Apache-2.0

//! The 784-hidden-10 network trained with crossbar weight updates.

pub mod crossbar;
pub mod network;
mod train;

pub use crossbar::{
    rpu_update, Backend, CrossbarPair, SigmaTable, Trajectory, UpdateCounts, UpdatePlan, UpdateRule,
};
pub use network::{Activation, Activations, Deltas, Network};
pub use train::{
    ablate, ablation_configs, evaluate, init_network, train, train_seed, SeedRun, TrainConfig,
    TrainData, TrainReport,
};
