// SPDX-License-Identifier: Apache-2.0

//! Derives the default per-pulse energy.
//!
//! Trains the MNIST N=500 true-gap configuration (5000/2000 images, 256
//! hidden units, three epochs, three seeds, every other setting at its
//! default), counts the applied program pulses per training sample and
//! solves for the 5 us pulse energy that puts the run at 5.70e-14 J per
//! sample.
//!
//! Run from the workspace root with
//! `cargo run --release --example energy_calibration [data_dir]`.

use std::path::PathBuf;

use ctf_rpu::dataset::{load_dir, Split};
use ctf_rpu::exec::ExecMode;
use ctf_rpu::fixture::{default_family, T_ON};
use ctf_rpu::metrics::{EnergyModel, DEFAULT_E_PULSE};
use ctf_rpu::pulse::GapPolicy;
use ctf_rpu::trainer::{train, TrainConfig, TrainData, UpdateRule};

const TARGET_J: f64 = 5.70e-14;

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "data".into());
    let dir = root.join("mnist");
    let data = TrainData {
        train: load_dir(&dir, Split::Train).expect("MNIST training files"),
        test: load_dir(&dir, Split::Test).expect("MNIST test files"),
    };
    let config = TrainConfig {
        hidden_units: 256,
        epochs: 3,
        subsample_n: Some(5000),
        test_n: Some(2000),
        rule: UpdateRule::new(500, GapPolicy::True, true, true),
        ..TrainConfig::default()
    };
    let report =
        train(&config, &data, &default_family(), ExecMode::Parallel).expect("training run");
    let pw = T_ON / 500.0;
    let reference = EnergyModel::default();
    // energy per pulse at width pw, then scaled back to the reference width
    let at_pw = TARGET_J / report.pulses_per_sample;
    let e_pulse = at_pw * reference.reference_pw / pw;
    println!(
        "accuracy            {:.2} +- {:.2} %",
        report.accuracy_mean, report.accuracy_sd
    );
    println!("pulses per sample   {:.1}", report.pulses_per_sample);
    println!(
        "current default     {DEFAULT_E_PULSE:e} J -> {:.3e} J per sample",
        report.energy_per_sample_j
    );
    println!(
        "calibrated e_pulse  {e_pulse:.4e} J at {:e} s",
        reference.reference_pw
    );
}
