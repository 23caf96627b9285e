// SPDX-License-Identifier: Apache-2.0

//! Stochastic bit trains, their AND product, and the threshold-voltage
//! response of a cell to a train.
//!
//! A value `p` in `[0, 1]` is encoded as an `N`-slot train whose slots are
//! independently ON with probability `p`. The coincidence of two trains
//! (AND) has ON probability `p_a * p_b`; each ON slot becomes one program
//! pulse on the device.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceFit, FitFamily, VtState, VtWindow};
use crate::error::{Error, Result};
use crate::exec::{compensated_sum, map_indexed, ExecMode};
use crate::pulse::{trap_time, GapPolicy, NonVolatileSpec, ProgramLimits};
use crate::rng::stream_rng;

/// Gap assigned to back-to-back ON pulses, in seconds.
pub const BACK_TO_BACK_GAP: f64 = 1e-9;

/// Fixed-length bit train, packed 64 slots per word.
#[derive(Debug, Clone, PartialEq)]
pub struct BitTrain {
    words: Vec<u64>,
    len: usize,
    pw: f64,
}

impl BitTrain {
    pub fn zeros(len: usize, pw: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Shape("bit train length must be at least 1".into()));
        }
        if !(pw > 0.0) {
            return Err(Error::Config(format!(
                "pulse width must be positive, got {pw}"
            )));
        }
        Ok(BitTrain {
            words: vec![0; len.div_ceil(64)],
            len,
            pw,
        })
    }

    pub fn ones(len: usize, pw: f64) -> Result<Self> {
        let mut t = Self::zeros(len, pw)?;
        for i in 0..len {
            t.set(i, true);
        }
        Ok(t)
    }

    pub fn from_bits(bits: &[bool], pw: f64) -> Result<Self> {
        let mut t = Self::zeros(bits.len(), pw)?;
        for (i, &b) in bits.iter().enumerate() {
            t.set(i, b);
        }
        Ok(t)
    }

    /// Train of length `len` from the low bits of `mask`, slot 0 first.
    pub fn from_mask(mask: u64, len: usize, pw: f64) -> Result<Self> {
        if len > 64 {
            return Err(Error::Shape(format!(
                "mask holds at most 64 slots, got {len}"
            )));
        }
        let mut t = Self::zeros(len, pw)?;
        t.words[0] = if len == 64 {
            mask
        } else {
            mask & ((1u64 << len) - 1)
        };
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pw(&self) -> f64 {
        self.pw
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "slot {i} out of range for train of length {}",
            self.len
        );
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        assert!(
            i < self.len,
            "slot {i} out of range for train of length {}",
            self.len
        );
        let bit = 1u64 << (i % 64);
        if on {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Indices of ON slots in increasing order.
    pub fn on_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + b)
            })
        })
    }
}

/// Bernoulli train drawn from `rng`.
pub fn encode_with<R: Rng + ?Sized>(
    p: f64,
    n_slots: usize,
    pw: f64,
    rng: &mut R,
) -> Result<BitTrain> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    let mut t = BitTrain::zeros(n_slots, pw)?;
    for i in 0..n_slots {
        // one uniform per slot, so trains for different p drawn from the same
        // stream are nested
        let u: f64 = rng.random();
        if u < p {
            t.set(i, true);
        }
    }
    Ok(t)
}

/// Bernoulli train from a fixed seed.
pub fn encode(p: f64, n_slots: usize, pw: f64, seed: u64) -> Result<BitTrain> {
    encode_with(p, n_slots, pw, &mut stream_rng(seed, 0))
}

pub fn and_overlap(a: &BitTrain, b: &BitTrain) -> Result<BitTrain> {
    if a.len != b.len {
        return Err(Error::Shape(format!(
            "cannot AND trains of lengths {} and {}",
            a.len, b.len
        )));
    }
    if (a.pw - b.pw).abs() > 1e-9 * a.pw {
        return Err(Error::Shape(format!(
            "cannot AND trains of pulse widths {:e} s and {:e} s",
            a.pw, b.pw
        )));
    }
    Ok(BitTrain {
        words: a.words.iter().zip(&b.words).map(|(x, y)| x & y).collect(),
        len: a.len,
        pw: a.pw,
    })
}

/// The fit a policy uses at width `pw`: the program-time-conserving fit for
/// `Ideal`, the calibrated one otherwise.
pub fn fit_for_policy(family: &FitFamily, policy: GapPolicy, pw: f64) -> Result<DeviceFit> {
    match policy {
        GapPolicy::Ideal => family.ideal_fit(pw),
        _ => family.at_pulse_width(pw),
    }
}

fn check_pw(train_pw: f64, fit: &DeviceFit) -> Result<()> {
    if (train_pw - fit.pw).abs() > 1e-9 * fit.pw {
        return Err(Error::Config(format!(
            "train pulse width {train_pw:e} s does not match fit pulse width {:e} s",
            fit.pw
        )));
    }
    Ok(())
}

/// Drives the cell through the ON slots of `train`, one model step per
/// pulse, clamping to the default window.
pub fn apply_train(
    vt0: VtState,
    train: &BitTrain,
    policy: GapPolicy,
    fit: &DeviceFit,
) -> Result<VtState> {
    apply_train_in(vt0, train, policy, fit, &VtWindow::default())
}

pub fn apply_train_in(
    vt0: VtState,
    train: &BitTrain,
    policy: GapPolicy,
    fit: &DeviceFit,
    window: &VtWindow,
) -> Result<VtState> {
    check_pw(train.pw, fit)?;
    let q_sat = fit.q_saturated();
    let mut vt = window.clamp(vt0.0).0;
    let mut last: Option<usize> = None;
    for i in train.on_slots() {
        let q = match policy {
            GapPolicy::Ideal => 1.0,
            GapPolicy::Sparse => q_sat,
            GapPolicy::True => match last {
                None => q_sat,
                Some(j) => fit.q_unchecked(BACK_TO_BACK_GAP + (i - j - 1) as f64 * fit.pw),
            },
        };
        vt = window.clamp(vt + fit.p_ideal(vt) * q).0;
        last = Some(i);
    }
    Ok(VtState(vt))
}

/// Threshold voltage after `count` back-to-back pulses from `vt0`.
pub fn apply_pulses(vt0: f64, count: usize, policy: GapPolicy, fit: &DeviceFit) -> Result<f64> {
    let train = BitTrain::ones(count, fit.pw)?;
    Ok(apply_train(VtState(vt0), &train, policy, fit)?.0)
}

/// Monte-Carlo statistics of the threshold-voltage change for one encoded
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub p: f64,
    pub n_slots: usize,
    pub policy: GapPolicy,
    pub mean_dvt: f64,
    pub sigma_dvt: f64,
    pub cv: f64,
    pub runs: usize,
}

/// Encodes `p` into `runs` independent trains (run `r` uses stream `r` of
/// `seed`) and applies each to a fresh cell at 0 V.
pub fn update_stats(
    p: f64,
    n_slots: usize,
    policy: GapPolicy,
    fit: &DeviceFit,
    runs: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<UpdateStats> {
    let samples = dvt_samples(p, n_slots, policy, fit, runs, seed, mode)?;
    let (mean, sigma) = crate::exec::mean_and_sd(&samples);
    let cv = if mean != 0.0 { sigma / mean } else { 0.0 };
    Ok(UpdateStats {
        p,
        n_slots,
        policy,
        mean_dvt: mean,
        sigma_dvt: sigma,
        cv,
        runs,
    })
}

/// The per-run threshold-voltage changes behind [`update_stats`].
pub fn dvt_samples(
    p: f64,
    n_slots: usize,
    policy: GapPolicy,
    fit: &DeviceFit,
    runs: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    if runs < 2 {
        return Err(Error::Config(format!(
            "update statistics need at least 2 runs, got {runs}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    check_pw(fit.pw, fit)?;
    BitTrain::zeros(n_slots, fit.pw)?;
    let out: Vec<Result<f64>> = map_indexed(mode, runs, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let train = encode_with(p, n_slots, fit.pw, &mut rng)?;
        Ok(apply_train(VtState(0.0), &train, policy, fit)?.0)
    });
    out.into_iter().collect()
}

/// Constants of the error-floor decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetOptions {
    /// Prefactor of the stochastic error `k / sqrt(N)`.
    pub k: f64,
    /// Conserved total ON time in seconds.
    pub t_on: f64,
    pub limits: ProgramLimits,
}

impl Default for BudgetOptions {
    fn default() -> Self {
        BudgetOptions {
            k: 1.0,
            t_on: 2.5e-3,
            limits: ProgramLimits::default(),
        }
    }
}

/// Fractional errors of an `N`-slot division of the program time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub n_slots: usize,
    pub stoch_err: f64,
    pub vt_err: f64,
    pub total_err: f64,
    pub compensated_vt_err: f64,
    pub compensated_total_err: f64,
    /// Trap time per pulse used for the compensated figures, seconds.
    pub t_trap: f64,
}

/// Pulses of width `fit.pw` needed to reach `target` from 0 V, with linear
/// interpolation inside the last step.
pub fn pulses_to_reach(
    target: f64,
    policy: GapPolicy,
    fit: &DeviceFit,
    max_pulses: usize,
) -> Result<f64> {
    let q = match policy {
        GapPolicy::Ideal => 1.0,
        _ => fit.q_saturated(),
    };
    let window = VtWindow::default();
    let mut vt = 0.0;
    for n in 0..max_pulses {
        let next = window.clamp(vt + fit.p_ideal(vt) * q).0;
        if next >= target {
            let step = next - vt;
            return Ok(n as f64
                + if step > 0.0 {
                    (target - vt) / step
                } else {
                    1.0
                });
        }
        if next <= vt {
            break;
        }
        vt = next;
    }
    Err(Error::InfeasibleCompensation(format!(
        "target {target} V not reached within {max_pulses} pulses of width {:e} s",
        fit.pw
    )))
}

/// Stochastic, threshold-voltage and total fractional error at `N` slots,
/// uncompensated (the policy's own timing) and with trap and de-trap time
/// added to every pulse.
pub fn error_budget(
    n_slots: usize,
    family: &FitFamily,
    policy: GapPolicy,
    opts: &BudgetOptions,
) -> Result<ErrorBudget> {
    let pw = opts.t_on / n_slots.max(1) as f64;
    opts.limits.check(n_slots, pw)?;
    let reference = fit_for_policy(family, policy, opts.t_on)?;
    let v_ref = apply_pulses(0.0, 1, policy, &reference)?;
    let fit = fit_for_policy(family, policy, pw)?;
    let v_n = apply_pulses(0.0, n_slots, policy, &fit)?;
    let vt_err = ((v_n - v_ref) / v_ref).abs();

    // de-trap gaps make every pulse see a saturated gap
    let comp_policy = match policy {
        GapPolicy::Ideal => GapPolicy::Ideal,
        _ => GapPolicy::Sparse,
    };
    let n_req = pulses_to_reach(v_ref, comp_policy, &fit, 100 * n_slots + 100)?;
    let spec = NonVolatileSpec::new(opts.t_on, n_req.max(1.0))?;
    let t_trap = trap_time(pw, &spec).unwrap_or(0.0);
    let comp_fit = fit_for_policy(family, comp_policy, pw + t_trap)?;
    let v_c = apply_pulses(0.0, n_slots, comp_policy, &comp_fit)?;
    let compensated_vt_err = ((v_c - v_ref) / v_ref).abs();

    let stoch_err = opts.k / (n_slots as f64).sqrt();
    Ok(ErrorBudget {
        n_slots,
        stoch_err,
        vt_err,
        total_err: stoch_err + vt_err,
        compensated_vt_err,
        compensated_total_err: stoch_err + compensated_vt_err,
        t_trap,
    })
}

/// One delimited-text row of the statistics sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub p: f64,
    pub n: usize,
    pub policy: GapPolicy,
    pub mean: f64,
    pub sigma: f64,
    pub cv: f64,
}

impl From<&UpdateStats> for StatsRow {
    fn from(s: &UpdateStats) -> Self {
        StatsRow {
            p: s.p,
            n: s.n_slots,
            policy: s.policy,
            mean: s.mean_dvt,
            sigma: s.sigma_dvt,
            cv: s.cv,
        }
    }
}

/// One delimited-text row of the error-floor sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub n: usize,
    pub stoch_err: f64,
    pub vt_err: f64,
    pub total_err: f64,
    pub compensated_total_err: f64,
}

impl From<&ErrorBudget> for BudgetRow {
    fn from(b: &ErrorBudget) -> Self {
        BudgetRow {
            n: b.n_slots,
            stoch_err: b.stoch_err,
            vt_err: b.vt_err,
            total_err: b.total_err,
            compensated_total_err: b.compensated_total_err,
        }
    }
}

/// The statistics grid: every `p` by every `N` by every policy, the fit for
/// each `N` taken from `family` at `t_on / N`.
#[allow(clippy::too_many_arguments)]
pub fn stats_sweep(
    family: &FitFamily,
    ps: &[f64],
    ns: &[usize],
    policies: &[GapPolicy],
    t_on: f64,
    runs: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<UpdateStats>> {
    let mut out = Vec::with_capacity(ps.len() * ns.len() * policies.len());
    for &policy in policies {
        for &n in ns {
            let fit = fit_for_policy(family, policy, t_on / n as f64)?;
            for &p in ps {
                out.push(update_stats(p, n, policy, &fit, runs, seed, mode)?);
            }
        }
    }
    Ok(out)
}

pub fn errorfloor_sweep(
    family: &FitFamily,
    ns: &[usize],
    policy: GapPolicy,
    opts: &BudgetOptions,
    mode: ExecMode,
) -> Result<Vec<ErrorBudget>> {
    map_indexed(mode, ns.len(), |i| {
        error_budget(ns[i], family, policy, opts)
    })
    .into_iter()
    .collect()
}

/// Mean over a set of stats, compensated.
pub fn mean_of(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    compensated_sum(v.iter().copied()) / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(pw: f64) -> DeviceFit {
        DeviceFit::normalized(pw, 0.02, -0.4, -0.1, 4e-3).unwrap()
    }

    #[test]
    fn encode_extremes() {
        assert_eq!(encode(0.0, 100, 1e-5, 1).unwrap().count_ones(), 0);
        assert_eq!(encode(1.0, 100, 1e-5, 1).unwrap().count_ones(), 100);
        assert!(matches!(encode(1.5, 10, 1e-5, 1), Err(Error::Domain(_))));
        assert!(encode(0.5, 0, 1e-5, 1).is_err());
    }

    #[test]
    fn encode_is_deterministic() {
        assert_eq!(
            encode(0.3, 1000, 1e-5, 9).unwrap(),
            encode(0.3, 1000, 1e-5, 9).unwrap()
        );
        assert_ne!(
            encode(0.3, 1000, 1e-5, 9).unwrap(),
            encode(0.3, 1000, 1e-5, 10).unwrap()
        );
    }

    #[test]
    fn encode_concentration() {
        let n = 100_000;
        let bound = 3.0 * (n as f64 * 0.25).sqrt();
        for seed in 0..20 {
            let k = encode(0.5, n, 1e-5, seed).unwrap().count_ones() as f64;
            assert!((k - 50_000.0).abs() <= bound, "seed {seed}: {k}");
        }
    }

    #[test]
    fn and_identity_annihilator_product() {
        let b = encode(0.37, 200, 1e-5, 3).unwrap();
        let ones = BitTrain::ones(200, 1e-5).unwrap();
        let zeros = BitTrain::zeros(200, 1e-5).unwrap();
        assert_eq!(and_overlap(&ones, &b).unwrap(), b);
        assert_eq!(and_overlap(&zeros, &b).unwrap(), zeros);
        let n = 100_000;
        let x = encode(0.4, n, 1e-5, 11).unwrap();
        let y = encode(0.5, n, 1e-5, 12).unwrap();
        let k = and_overlap(&x, &y).unwrap().count_ones() as f64;
        let sd = (n as f64 * 0.2 * 0.8).sqrt();
        assert!((k - 20_000.0).abs() <= 3.0 * sd, "{k}");
        let short = BitTrain::zeros(10, 1e-5).unwrap();
        assert!(matches!(and_overlap(&short, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn on_slots_cross_word_boundaries() {
        let mut t = BitTrain::zeros(130, 1e-5).unwrap();
        for i in [0, 63, 64, 127, 129] {
            t.set(i, true);
        }
        assert_eq!(t.on_slots().collect::<Vec<_>>(), vec![0, 63, 64, 127, 129]);
        assert_eq!(t.count_ones(), 5);
    }

    #[test]
    fn apply_trivial_cases() {
        let f = fit(25e-6);
        let zeros = BitTrain::zeros(100, 25e-6).unwrap();
        assert_eq!(
            apply_train(VtState(0.3), &zeros, GapPolicy::True, &f).unwrap(),
            VtState(0.3)
        );
        let mut one = zeros.clone();
        one.set(40, true);
        let v = apply_train(VtState(0.3), &one, GapPolicy::Sparse, &f)
            .unwrap()
            .0;
        let expected = 0.3 + f.dvt_step(0.3, f.t_critical).unwrap();
        assert_eq!(v, expected);
        let other = BitTrain::zeros(100, 5e-6).unwrap();
        assert!(matches!(
            apply_train(VtState(0.0), &other, GapPolicy::True, &f),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sparse_ignores_positions() {
        let f = fit(25e-6);
        let a = BitTrain::from_bits(&[true, true, false, false, true, false], 25e-6).unwrap();
        let b = BitTrain::from_bits(&[false, true, false, true, false, true], 25e-6).unwrap();
        for policy in [GapPolicy::Sparse, GapPolicy::Ideal] {
            let va = apply_train(VtState(0.0), &a, policy, &f).unwrap();
            let vb = apply_train(VtState(0.0), &b, policy, &f).unwrap();
            assert_eq!(va, vb);
        }
        let va = apply_train(VtState(0.0), &a, GapPolicy::True, &f).unwrap();
        let vb = apply_train(VtState(0.0), &b, GapPolicy::True, &f).unwrap();
        assert_ne!(va, vb);
    }

    #[test]
    fn stats_of_zero_probability() {
        let s = update_stats(
            0.0,
            100,
            GapPolicy::True,
            &fit(25e-6),
            50,
            1,
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!((s.mean_dvt, s.sigma_dvt, s.cv), (0.0, 0.0, 0.0));
        assert!(update_stats(
            0.5,
            100,
            GapPolicy::True,
            &fit(25e-6),
            1,
            1,
            ExecMode::Sequential
        )
        .is_err());
    }

    #[test]
    fn stats_identical_across_modes() {
        let f = fit(25e-6);
        let a = update_stats(0.4, 100, GapPolicy::True, &f, 500, 5, ExecMode::Sequential).unwrap();
        let b = update_stats(0.4, 100, GapPolicy::True, &f, 500, 5, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pulses_to_reach_interpolates() {
        let f = DeviceFit::new(1e-5, 0.1, 0.0, 0.0, 1.0, 1e-3).unwrap();
        let n = pulses_to_reach(0.25, GapPolicy::Sparse, &f, 100).unwrap();
        assert!((n - 2.5).abs() < 1e-12, "{n}");
        assert!(pulses_to_reach(50.0, GapPolicy::Sparse, &f, 10).is_err());
    }
}
