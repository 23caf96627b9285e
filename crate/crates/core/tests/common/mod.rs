// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use ctf_rpu::device::DeviceFit;

pub const EPSILON_GAP: f64 = 1e-9;

/// Straight transcription of the per-pulse loop: walk the slots, track the
/// empty slots since the last ON pulse, and step the voltage on every ON
/// slot. The first pulse sees an unbounded gap.
pub fn reference_train(bits: &[bool], fit: &DeviceFit, gap_aware: bool, vt0: f64) -> f64 {
    let (a, b, c1, c2, tc, pw) = (
        fit.a_coeff,
        fit.b_coeff,
        fit.c1,
        fit.c2,
        fit.t_critical,
        fit.pw,
    );
    let multiplier = |gap: f64| -> f64 {
        let g = if gap < tc { gap } else { tc };
        let q = c1 * g.log10() + c2;
        if q < 0.0 {
            0.0
        } else {
            q
        }
    };
    let mut vt = vt0;
    let mut seen_pulse = false;
    let mut empty = 0usize;
    for &bit in bits {
        if !bit {
            empty += 1;
            continue;
        }
        let gap = if seen_pulse && gap_aware {
            EPSILON_GAP + empty as f64 * pw
        } else {
            f64::INFINITY
        };
        let dv = a * (b * vt).exp() * multiplier(gap);
        vt = (vt + dv).clamp(0.0, 4.0);
        seen_pulse = true;
        empty = 0;
    }
    vt
}

pub fn bits_of(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
