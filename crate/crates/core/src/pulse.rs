// SPDX-License-Identifier: Apache-2.0

//! Compensation pulse schemes and their latency.
//!
//! A total program ON-time `T_ON` is divided into `N` pulses of width
//! `pw = T_ON / N`. The schemes differ in what they add per pulse:
//!
//! | scheme | gap                   | extra per pulse                     |
//! |--------|-----------------------|-------------------------------------|
//! | P1     | none (true gaps)      | nothing                             |
//! | P2     | `t_de_trap`           | de-trap gap                         |
//! | P3     | `t_de_trap`           | trap time + de-trap gap             |
//! | P4     | none (true gaps)      | trap time + negative de-trap pulse  |
//!
//! Durations are held as [`Duration`] so latency sums are exact to the
//! nanosecond.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::device::{DeviceFit, FitFamily};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    P1,
    P2,
    P3,
    P4,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::P1, SchemeId::P2, SchemeId::P3, SchemeId::P4];
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchemeId::P1 => "p1",
            SchemeId::P2 => "p2",
            SchemeId::P3 => "p3",
            SchemeId::P4 => "p4",
        };
        f.write_str(s)
    }
}

impl FromStr for SchemeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(SchemeId::P1),
            "p2" => Ok(SchemeId::P2),
            "p3" => Ok(SchemeId::P3),
            "p4" => Ok(SchemeId::P4),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?}; expected p1..p4"
            ))),
        }
    }
}

/// How inter-pulse gaps enter the device model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapPolicy {
    /// Gap multiplier replaced by 1.
    Ideal,
    /// Every gap at least `t_critical`.
    Sparse,
    /// Gaps as they fall out of the stochastic train.
    True,
}

impl GapPolicy {
    pub const ALL: [GapPolicy; 3] = [GapPolicy::Ideal, GapPolicy::Sparse, GapPolicy::True];
}

impl fmt::Display for GapPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GapPolicy::Ideal => "ideal",
            GapPolicy::Sparse => "sparse",
            GapPolicy::True => "true",
        };
        f.write_str(s)
    }
}

impl FromStr for GapPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(GapPolicy::Ideal),
            "sparse" => Ok(GapPolicy::Sparse),
            "true" => Ok(GapPolicy::True),
            other => Err(Error::Config(format!(
                "unknown gap policy {other:?}; expected ideal, sparse or true"
            ))),
        }
    }
}

/// Effective non-volatile writing time and the number of `pw`-wide pulses
/// needed to reach the target threshold voltage. `n_req` may be fractional
/// when it is estimated from the device model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonVolatileSpec {
    pub t_nv: f64,
    pub n_req: f64,
}

impl NonVolatileSpec {
    pub fn new(t_nv: f64, n_req: f64) -> Result<Self> {
        if !(t_nv > 0.0 && t_nv.is_finite()) {
            return Err(Error::Config(format!("t_nv must be positive, got {t_nv}")));
        }
        if !(n_req >= 1.0 && n_req.is_finite()) {
            return Err(Error::Config(format!(
                "n_req must be at least 1, got {n_req}"
            )));
        }
        Ok(NonVolatileSpec { t_nv, n_req })
    }

    /// The spec that needs no trap time at width `pw` (`t_nv / n_req = pw`).
    pub fn matching(pw: f64) -> Self {
        NonVolatileSpec {
            t_nv: pw,
            n_req: 1.0,
        }
    }
}

/// Trap time added to each pulse, `pw - t_nv / n_req`.
pub fn trap_time(pw: f64, spec: &NonVolatileSpec) -> Result<f64> {
    let per_pulse = spec.t_nv / spec.n_req;
    let t = pw - per_pulse;
    // one part in 1e12 of slack absorbs rounding at the boundary
    if t < -1e-12 * pw {
        return Err(Error::InfeasibleCompensation(format!(
            "t_nv/n_req = {per_pulse:e} s exceeds the pulse width {pw:e} s"
        )));
    }
    Ok(t.max(0.0))
}

/// De-trap gap for one width: its saturation gap.
pub fn detrap_time(fit: &DeviceFit) -> f64 {
    fit.t_critical
}

/// De-trap gap that serves every width in `fits`: the largest `t_critical`.
pub fn detrap_time_max(fits: &[DeviceFit]) -> Result<f64> {
    if fits.is_empty() {
        return Err(Error::Config(
            "no fits given; maximum t_critical undefined".into(),
        ));
    }
    Ok(fits
        .iter()
        .map(detrap_time)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Hard limits of the device model: beyond `n_max` pulses per `T_ON`, or
/// below `pw_min`, the threshold-voltage shift vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramLimits {
    pub n_max: usize,
    pub pw_min: f64,
}

impl Default for ProgramLimits {
    fn default() -> Self {
        ProgramLimits {
            n_max: 1000,
            pw_min: 2.5e-6,
        }
    }
}

impl ProgramLimits {
    pub fn check(&self, n_slots: usize, pw: f64) -> Result<()> {
        if n_slots == 0 {
            return Err(Error::Config(
                "a pulse train needs at least one slot".into(),
            ));
        }
        if n_slots > self.n_max {
            return Err(Error::ModelValidity(format!(
                "N = {n_slots} exceeds the valid maximum of {} pulses per T_ON",
                self.n_max
            )));
        }
        if pw < self.pw_min * (1.0 - 1e-9) {
            return Err(Error::ModelValidity(format!(
                "pulse width {pw:e} s is below the minimum {:e} s; V_T shift vanishes there",
                self.pw_min
            )));
        }
        Ok(())
    }
}

/// Options that Table I leaves to the designer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProgramOptions {
    /// De-trap gap for P2/P3; defaults to the fit's `t_critical`.
    pub t_de_trap: Option<Duration>,
    /// Negative de-trap pulse for P4; defaults to `pw`.
    pub negative_pulse: Option<Duration>,
    pub limits: ProgramLimits,
}

/// A fully timed pulse train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseProgram {
    pub scheme: SchemeId,
    pub n_slots: usize,
    #[serde(with = "nanos", rename = "t_on_ns")]
    pub t_on: Duration,
    #[serde(with = "nanos", rename = "pw_ns")]
    pub pw: Duration,
    #[serde(with = "nanos", rename = "t_trap_ns")]
    pub t_trap: Duration,
    pub t_gap_policy: GapPolicy,
    #[serde(with = "nanos", rename = "t_de_trap_ns")]
    pub t_de_trap: Duration,
    pub has_negative_pulse: bool,
}

mod nanos {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_nanos() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_nanos(u64::deserialize(d)?))
    }
}

pub(crate) fn seconds(s: f64) -> Result<Duration> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Config(format!(
            "duration must be non-negative, got {s} s"
        )));
    }
    Ok(Duration::from_nanos((s * 1e9).round() as u64))
}

impl PulseProgram {
    pub fn validate(&self) -> Result<()> {
        if self.n_slots == 0 || self.pw.is_zero() {
            return Err(Error::Config("program needs N >= 1 and pw > 0".into()));
        }
        let ok = match self.scheme {
            SchemeId::P1 => {
                self.t_trap.is_zero() && self.t_de_trap.is_zero() && !self.has_negative_pulse
            }
            SchemeId::P2 => self.t_trap.is_zero() && !self.has_negative_pulse,
            SchemeId::P3 => !self.t_trap.is_zero() && !self.has_negative_pulse,
            SchemeId::P4 => !self.t_trap.is_zero() && self.has_negative_pulse,
        };
        if !ok {
            return Err(Error::Config(format!(
                "fields inconsistent with scheme {}: {self:?}",
                self.scheme
            )));
        }
        Ok(())
    }

    /// Pulse width in seconds as used by the device model.
    pub fn pw_seconds(&self) -> f64 {
        self.t_on.as_secs_f64() / self.n_slots as f64
    }

    /// Gap treatment seen by the device. P4's negative pulse empties the
    /// blocking-oxide traps, so the next pulse sees a saturated gap.
    pub fn device_policy(&self) -> GapPolicy {
        match self.scheme {
            SchemeId::P1 => GapPolicy::True,
            _ => GapPolicy::Sparse,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("program serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: PulseProgram = toml::from_str(text)
            .map_err(|e| Error::Config(format!("pulse program document: {e}")))?;
        p.validate()?;
        Ok(p)
    }
}

pub fn build_program(
    scheme: SchemeId,
    n_slots: usize,
    t_on_total: Duration,
    fit: &DeviceFit,
    spec: &NonVolatileSpec,
) -> Result<PulseProgram> {
    build_program_with(
        scheme,
        n_slots,
        t_on_total,
        fit,
        spec,
        &ProgramOptions::default(),
    )
}

pub fn build_program_with(
    scheme: SchemeId,
    n_slots: usize,
    t_on_total: Duration,
    fit: &DeviceFit,
    spec: &NonVolatileSpec,
    opts: &ProgramOptions,
) -> Result<PulseProgram> {
    if t_on_total.is_zero() {
        return Err(Error::Config("T_ON must be positive".into()));
    }
    let pw_s = t_on_total.as_secs_f64() / n_slots.max(1) as f64;
    opts.limits.check(n_slots, pw_s)?;
    let pw = Duration::from_nanos((t_on_total.as_nanos() as f64 / n_slots as f64).round() as u64);
    let de_trap = match opts.t_de_trap {
        Some(d) => d,
        None => seconds(detrap_time(fit))?,
    };
    let trap = || -> Result<Duration> {
        let t = trap_time(pw_s, spec)?;
        if t <= 0.0 {
            return Err(Error::InfeasibleCompensation(format!(
                "{scheme} needs a positive trap time but t_nv/n_req equals pw; use p2 instead"
            )));
        }
        seconds(t)
    };
    let (t_trap, t_de_trap, policy, neg) = match scheme {
        SchemeId::P1 => (Duration::ZERO, Duration::ZERO, GapPolicy::True, false),
        SchemeId::P2 => (Duration::ZERO, de_trap, GapPolicy::Sparse, false),
        SchemeId::P3 => (trap()?, de_trap, GapPolicy::Sparse, false),
        SchemeId::P4 => (
            trap()?,
            opts.negative_pulse.unwrap_or(pw),
            GapPolicy::True,
            true,
        ),
    };
    let prog = PulseProgram {
        scheme,
        n_slots,
        t_on: t_on_total,
        pw,
        t_trap,
        t_gap_policy: policy,
        t_de_trap,
        has_negative_pulse: neg,
    };
    prog.validate()?;
    Ok(prog)
}

/// Wall time of one full pulse train:
/// `T_ON + N * (t_trap + t_de_trap)`.
pub fn total_latency(prog: &PulseProgram) -> Duration {
    prog.t_on + (prog.t_trap + prog.t_de_trap) * prog.n_slots as u32
}

/// The program a training run with gap policy `policy` implies: true gaps
/// run as P1, sparse gaps as P2 with the family-wide de-trap gap, and the
/// ideal case is timed like P1.
pub fn program_for_policy(
    policy: GapPolicy,
    n_slots: usize,
    t_on_total: Duration,
    family: &FitFamily,
) -> Result<PulseProgram> {
    let pw = t_on_total.as_secs_f64() / n_slots.max(1) as f64;
    let fit = family.at_pulse_width(pw)?;
    let spec = NonVolatileSpec::matching(pw);
    let opts = ProgramOptions {
        t_de_trap: Some(seconds(family.max_t_critical())?),
        ..ProgramOptions::default()
    };
    let scheme = match policy {
        GapPolicy::Ideal | GapPolicy::True => SchemeId::P1,
        GapPolicy::Sparse => SchemeId::P2,
    };
    build_program_with(scheme, n_slots, t_on_total, &fit, &spec, &opts)
}
