// SPDX-License-Identifier: Apache-2.0

//! Default device calibration.
//!
//! Four divided-pulse records (2.5, 5, 25 and 100 us, i.e. N = 1000, 500,
//! 100 and 25 at T_ON = 2.5 ms) plus a single-pulse reference at 2.5 ms.
//!
//! Each record is built from a handful of shape parameters rather than raw
//! constants:
//!
//! - the full-train shift under saturated gaps, `V_N = V_1 (1 - droop log10 N)`;
//! - the compression `kappa = A |B| N`, which fixes how strongly the step
//!   shrinks as the cell charges;
//! - the gap slope `C1` and saturation gap `t_critical`.
//!
//! `kappa` and `C1` come from `examples/fixture_search.rs`, which matches
//! the N=100/500/1000 spread of the threshold-voltage change at p = 0.8
//! under sparse and true gaps. The N=25 record reuses the N=100 shape.

use serde::{Deserialize, Serialize};

use crate::device::{DeviceFit, FitFamily};
use crate::error::{Error, Result};

/// Conserved program ON-time, seconds.
pub const T_ON: f64 = 2.5e-3;
/// Shift of a single undivided pulse, volts.
pub const V_SINGLE: f64 = 1.0;
/// Fractional loss of the saturated-gap shift per decade of N.
pub const DROOP: f64 = 0.1;
/// Probability at which the calibrated spread is matched.
pub const SPREAD_PROBE: f64 = 0.8;

/// Shape parameters of one divided-pulse record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordShape {
    pub n_slots: usize,
    pub kappa: f64,
    pub c1: f64,
    pub t_critical: f64,
}

pub const DEFAULT_SHAPES: [RecordShape; 4] = [
    RecordShape {
        n_slots: 1000,
        kappa: 0.15,
        c1: -0.4,
        t_critical: 1e-3,
    },
    RecordShape {
        n_slots: 500,
        kappa: 0.3,
        c1: -0.25,
        t_critical: 2e-3,
    },
    RecordShape {
        n_slots: 100,
        kappa: 0.3,
        c1: -0.3,
        t_critical: 4e-3,
    },
    RecordShape {
        n_slots: 25,
        kappa: 0.3,
        c1: -0.3,
        t_critical: 10e-3,
    },
];

/// Saturated-gap shift of the full `n`-pulse train.
pub fn full_train_target(n_slots: usize) -> f64 {
    V_SINGLE * (1.0 - DROOP * (n_slots as f64).log10())
}

fn saturated_full_train(a: f64, b: f64, n: usize) -> f64 {
    let mut v = 0.0;
    for _ in 0..n {
        v += a * (b * v).exp();
    }
    v
}

/// The fit realizing `shape`: `B` from the continuum solution
/// `V_N = ln(1 + kappa) / |B|`, then `A` solved so that the discrete
/// saturated-gap train lands exactly on [`full_train_target`].
pub fn record_fit(shape: &RecordShape) -> Result<DeviceFit> {
    if shape.n_slots == 0 || !(shape.kappa > 0.0) {
        return Err(Error::Config(format!("invalid record shape {shape:?}")));
    }
    let target = full_train_target(shape.n_slots);
    if !(target > 0.0) {
        return Err(Error::Config(format!(
            "no positive shift left at N = {}",
            shape.n_slots
        )));
    }
    let b = -(1.0 + shape.kappa).ln() / target;
    let (mut lo, mut hi) = (0.0, 10.0 * target);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if saturated_full_train(mid, b, shape.n_slots) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pw = T_ON / shape.n_slots as f64;
    DeviceFit::normalized(pw, 0.5 * (lo + hi), b, shape.c1, shape.t_critical)
}

/// Single-pulse reference: one pulse lands on [`V_SINGLE`]; gap constants
/// are those of the widest divided record.
pub fn reference_fit(widest: &DeviceFit, t_critical: f64) -> Result<DeviceFit> {
    DeviceFit::normalized(T_ON, V_SINGLE, widest.b_coeff, widest.c1, t_critical)
}

pub fn family_from_shapes(shapes: &[RecordShape]) -> Result<FitFamily> {
    let mut fits = shapes.iter().map(record_fit).collect::<Result<Vec<_>>>()?;
    let widest = *fits
        .iter()
        .max_by(|a, b| a.pw.total_cmp(&b.pw))
        .ok_or_else(|| Error::Config("no record shapes".into()))?;
    let t_max = fits.iter().map(|f| f.t_critical).fold(0.0, f64::max);
    fits.push(reference_fit(&widest, t_max)?);
    FitFamily::new(fits)
}

/// The default calibrated family.
pub fn default_family() -> FitFamily {
    family_from_shapes(&DEFAULT_SHAPES).expect("default shapes are valid")
}
