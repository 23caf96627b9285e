// SPDX-License-Identifier: Apache-2.0

//! Searches the record shapes of the default fixture.
//!
//! For each pulse count with a spread target, a grid over `kappa` and `C1`
//! is scored by the summed squared log-miss of the sparse-gap and true-gap
//! cv at p = 0.8. Sparse gaps do not see `C1`, so their cv is computed once
//! per `kappa`. The true-gap cv is not monotone in `C1`: a steeper slope
//! adds gap noise but also raises the mean, which the state term then
//! compresses.
//!
//! Run with `cargo run --release --example fixture_search`.

use ctf_rpu::exec::ExecMode;
use ctf_rpu::fixture::{record_fit, RecordShape, DEFAULT_SHAPES, SPREAD_PROBE};
use ctf_rpu::pulse::GapPolicy;
use ctf_rpu::stochastic::update_stats;

const RUNS: usize = 2000;
const SEED: u64 = 2024;

// (N, sparse cv, true cv)
const TARGETS: [(usize, f64, f64); 3] =
    [(1000, 0.012, 0.02), (500, 0.018, 0.025), (100, 0.04, 0.06)];

fn cv(shape: &RecordShape, policy: GapPolicy) -> f64 {
    let fit = record_fit(shape).expect("valid shape");
    update_stats(
        SPREAD_PROBE,
        shape.n_slots,
        policy,
        &fit,
        RUNS,
        SEED,
        ExecMode::Parallel,
    )
    .expect("stats")
    .cv
}

fn main() {
    for (n, sparse_target, true_target) in TARGETS {
        let base = *DEFAULT_SHAPES
            .iter()
            .find(|s| s.n_slots == n)
            .expect("shape for N");
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for ki in 1..=12 {
            let kappa = 0.05 * ki as f64;
            let sparse = cv(&RecordShape { kappa, ..base }, GapPolicy::Sparse);
            for ci in 1..=12 {
                let c1 = -0.05 * ci as f64;
                let truth = cv(&RecordShape { kappa, c1, ..base }, GapPolicy::True);
                let miss =
                    (sparse / sparse_target).ln().powi(2) + (truth / true_target).ln().powi(2);
                if miss < best.0 {
                    best = (miss, kappa, c1);
                }
            }
        }
        let (_, kappa, c1) = best;
        let shape = RecordShape { kappa, c1, ..base };
        println!(
            "N={n:5} kappa={kappa:.4} c1={c1:.4} sparse_cv={:.4} true_cv={:.4}",
            cv(&shape, GapPolicy::Sparse),
            cv(&shape, GapPolicy::True)
        );
    }
    for shape in DEFAULT_SHAPES {
        println!(
            "frozen N={:5} sparse_cv={:.4} true_cv={:.4}",
            shape.n_slots,
            cv(&shape, GapPolicy::Sparse),
            cv(&shape, GapPolicy::True)
        );
    }
}
