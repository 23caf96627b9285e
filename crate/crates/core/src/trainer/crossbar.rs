// SPDX-License-Identifier: Apache-2.0

//! Crossbar weight storage and the device-level update rule.
//!
//! A signed weight is the scaled difference of two non-negative device
//! states, `w = scale * (w_pos - w_neg)`, each state normalized to `[0, 1]`.
//! Positive updates program the `pos` device, negative ones the `neg`
//! device; devices are only ever programmed upwards, so a pair whose larger
//! state crosses the refresh threshold is re-written to its difference.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceFit, FitFamily, VtState};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::pulse::GapPolicy;
use crate::rng::{stream_rng, StreamRng};
use crate::stochastic::{
    and_overlap, apply_train, dvt_samples, encode_with, fit_for_policy, BitTrain,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarPair {
    rows: usize,
    cols: usize,
    scale: f64,
    w_pos: Vec<f64>,
    w_neg: Vec<f64>,
    weights: Vec<f64>,
}

impl CrossbarPair {
    pub fn zeros(rows: usize, cols: usize, scale: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "crossbar needs positive size, got {rows}x{cols}"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "weight scale must be positive, got {scale}"
            )));
        }
        let n = rows * cols;
        Ok(CrossbarPair {
            rows,
            cols,
            scale,
            w_pos: vec![0.0; n],
            w_neg: vec![0.0; n],
            weights: vec![0.0; n],
        })
    }

    /// Weights drawn uniformly from `[-range, range]`, each written to one
    /// device of its pair.
    pub fn random(rows: usize, cols: usize, scale: f64, range: f64, seed: u64) -> Result<Self> {
        let mut pair = Self::zeros(rows, cols, scale)?;
        let mut rng = stream_rng(seed, 0);
        for i in 0..rows {
            for j in 0..cols {
                let w = range * (2.0 * rng.random::<f64>() - 1.0);
                pair.set_weight(i, j, w);
            }
        }
        Ok(pair)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Effective weights, row major by input.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn w_pos(&self) -> &[f64] {
        &self.w_pos
    }

    pub fn w_neg(&self) -> &[f64] {
        &self.w_neg
    }

    /// Writes weight `w` (clamped to `[-scale, scale]`) onto one device.
    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) {
        let d = (w / self.scale).clamp(-1.0, 1.0);
        let k = i * self.cols + j;
        self.w_pos[k] = d.max(0.0);
        self.w_neg[k] = (-d).max(0.0);
        self.weights[k] = self.scale * (self.w_pos[k] - self.w_neg[k]);
    }

    fn refresh(&mut self, k: usize) {
        let d = self.w_pos[k] - self.w_neg[k];
        self.w_pos[k] = d.max(0.0);
        self.w_neg[k] = (-d).max(0.0);
        self.weights[k] = self.scale * d;
    }

    pub fn states_in_range(&self) -> bool {
        self.w_pos
            .iter()
            .chain(&self.w_neg)
            .all(|w| (0.0..=1.0).contains(w))
    }
}

/// Normalized mean threshold-voltage response versus pulse fraction,
/// sampled on a uniform grid of `u` in `[0, 1]`, with `T(0) = 0` and
/// `T(1) = 1`. Devices move along it: a state `w` sits at `u = T^-1(w)` and
/// an update of `du` pulses-per-train lands on `T(u + du)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    values: Vec<f64>,
}

impl Trajectory {
    pub fn linear() -> Self {
        Trajectory {
            values: vec![0.0, 1.0],
        }
    }

    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("trajectory needs at least two points".into()));
        }
        let top = *values.last().expect("non-empty");
        if !(top > 0.0) || values[0] != 0.0 {
            return Err(Error::Config(
                "trajectory must start at 0 and end above it".into(),
            ));
        }
        values.iter_mut().for_each(|v| *v /= top);
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("trajectory must be non-decreasing".into()));
        }
        Ok(Trajectory { values })
    }

    /// Mean response of an `n_slots` train at fit `fit` for `points + 1`
    /// evenly spaced probabilities. All probabilities share random streams,
    /// which keeps the sampled curve monotone.
    pub fn from_fit(
        fit: &DeviceFit,
        n_slots: usize,
        policy: GapPolicy,
        points: usize,
        runs: usize,
        seed: u64,
        mode: ExecMode,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(points + 1);
        values.push(0.0);
        for k in 1..=points {
            let p = k as f64 / points as f64;
            let s = dvt_samples(p, n_slots, policy, fit, runs, seed, mode)?;
            values.push(crate::stochastic::mean_of(s));
        }
        Trajectory::from_values(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_linear(&self) -> bool {
        let n = (self.values.len() - 1) as f64;
        self.values
            .iter()
            .enumerate()
            .all(|(k, &v)| (v - k as f64 / n).abs() < 1e-15)
    }

    pub fn eval(&self, u: f64) -> f64 {
        let n = self.values.len() - 1;
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let x = u * n as f64;
        let k = (x as usize).min(n - 1);
        let t = x - k as f64;
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }

    pub fn inverse(&self, w: f64) -> f64 {
        let n = self.values.len() - 1;
        if w <= 0.0 {
            return 0.0;
        }
        if w >= 1.0 {
            return 1.0;
        }
        // first grid point at or above w
        let hi = self.values.partition_point(|&v| v < w).clamp(1, n);
        let (a, b) = (self.values[hi - 1], self.values[hi]);
        let t = if b > a { (w - a) / (b - a) } else { 0.0 };
        ((hi - 1) as f64 + t) / n as f64
    }
}

/// Standard deviation of the normalized per-update threshold-voltage change,
/// keyed by policy and pulse count. Missing pulse counts are derived from the
/// entry at 1000 (or the largest available) with `sigma ~ 1/sqrt(N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaTable {
    #[serde(rename = "true")]
    pub true_gap: BTreeMap<usize, f64>,
    pub sparse: BTreeMap<usize, f64>,
    #[serde(default)]
    pub ideal: BTreeMap<usize, f64>,
}

impl Default for SigmaTable {
    fn default() -> Self {
        SigmaTable {
            true_gap: BTreeMap::from([(100, 0.06), (500, 0.025), (1000, 0.02)]),
            sparse: BTreeMap::from([(100, 0.04), (500, 0.018), (1000, 0.012)]),
            ideal: BTreeMap::new(),
        }
    }
}

impl SigmaTable {
    fn entries(&self, policy: GapPolicy) -> &BTreeMap<usize, f64> {
        match policy {
            GapPolicy::True => &self.true_gap,
            GapPolicy::Sparse => &self.sparse,
            GapPolicy::Ideal => &self.ideal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for policy in GapPolicy::ALL {
            for (&n, &s) in self.entries(policy) {
                if n == 0 || !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::Config(format!(
                        "sigma_table.{policy}: invalid entry N={n}, sigma={s}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sigma(&self, policy: GapPolicy, n_slots: usize) -> Result<f64> {
        let e = self.entries(policy);
        if let Some(&s) = e.get(&n_slots) {
            return Ok(s);
        }
        let (&n_ref, &s_ref) = e
            .get_key_value(&1000)
            .or_else(|| e.iter().next_back())
            .ok_or_else(|| {
                Error::Config(format!("sigma_table has no entry for policy {policy}"))
            })?;
        Ok(s_ref * (n_ref as f64 / n_slots as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Quantize, add Gaussian noise, cast onto the trajectory.
    #[default]
    Surrogate,
    /// Encode, AND and apply actual pulse trains through the device model.
    Stochastic,
}

/// How a raw gradient becomes a device update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateRule {
    pub n_slots: usize,
    pub policy: GapPolicy,
    pub noise: bool,
    pub nonlinearity: bool,
    /// Round pulse counts to whole pulses; off only for the software
    /// reference.
    #[serde(default = "yes")]
    pub quantize: bool,
    #[serde(default)]
    pub sigma_table: SigmaTable,
}

fn yes() -> bool {
    true
}

impl UpdateRule {
    pub fn new(n_slots: usize, policy: GapPolicy, noise: bool, nonlinearity: bool) -> Self {
        UpdateRule {
            n_slots,
            policy,
            noise,
            nonlinearity,
            quantize: true,
            sigma_table: SigmaTable::default(),
        }
    }

    /// Plain floating-point SGD on the crossbar.
    pub fn ideal() -> Self {
        UpdateRule {
            n_slots: 1000,
            policy: GapPolicy::Ideal,
            noise: false,
            nonlinearity: false,
            quantize: false,
            sigma_table: SigmaTable::default(),
        }
    }

    pub fn is_ideal(&self) -> bool {
        !self.quantize && !self.noise && !self.nonlinearity
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slots == 0 {
            return Err(Error::Config("rule.n_slots must be at least 1".into()));
        }
        self.sigma_table.validate()?;
        if self.noise {
            self.sigma()?;
        }
        Ok(())
    }

    pub fn sigma(&self) -> Result<f64> {
        self.sigma_table.sigma(self.policy, self.n_slots)
    }
}

/// Everything an update needs that is fixed for a whole run.
#[derive(Debug, Clone)]
pub struct UpdatePlan {
    pub n_slots: usize,
    pub quantize: bool,
    pub sigma: f64,
    pub trajectory: Trajectory,
    pub backend: Backend,
    /// Refresh a pair once either state reaches this value.
    pub refresh_at: Option<f64>,
    stochastic: Option<StochasticDevice>,
}

#[derive(Debug, Clone)]
struct StochasticDevice {
    fit: DeviceFit,
    policy: GapPolicy,
    full_train: f64,
}

/// Trajectory resolution and Monte-Carlo effort of [`UpdatePlan::prepare`].
pub const TRAJECTORY_POINTS: usize = 20;
pub const TRAJECTORY_RUNS: usize = 200;

impl UpdatePlan {
    pub fn prepare(
        rule: &UpdateRule,
        family: &FitFamily,
        t_on: f64,
        backend: Backend,
        refresh_at: Option<f64>,
        seed: u64,
        mode: ExecMode,
    ) -> Result<Self> {
        rule.validate()?;
        let pw = t_on / rule.n_slots as f64;
        let needs_fit = rule.nonlinearity || backend == Backend::Stochastic;
        let fit = if needs_fit {
            Some(fit_for_policy(family, rule.policy, pw)?)
        } else {
            None
        };
        let trajectory = match (&fit, rule.nonlinearity) {
            (Some(f), true) => Trajectory::from_fit(
                f,
                rule.n_slots,
                rule.policy,
                TRAJECTORY_POINTS,
                TRAJECTORY_RUNS,
                seed,
                mode,
            )?,
            _ => Trajectory::linear(),
        };
        let stochastic = match (backend, fit) {
            (Backend::Stochastic, Some(f)) => {
                let full = BitTrain::ones(rule.n_slots, f.pw)?;
                let full_train = apply_train(VtState(0.0), &full, rule.policy, &f)?.0;
                Some(StochasticDevice {
                    fit: f,
                    policy: rule.policy,
                    full_train,
                })
            }
            _ => None,
        };
        Ok(UpdatePlan {
            n_slots: rule.n_slots,
            quantize: rule.quantize,
            sigma: if rule.noise { rule.sigma()? } else { 0.0 },
            trajectory,
            backend,
            refresh_at,
            stochastic,
        })
    }

    /// A linear, noise-free plan; quantized when `quantize` is set.
    pub fn simple(n_slots: usize, quantize: bool, sigma: f64) -> Self {
        UpdatePlan {
            n_slots,
            quantize,
            sigma,
            trajectory: Trajectory::linear(),
            backend: Backend::Surrogate,
            refresh_at: None,
            stochastic: None,
        }
    }
}

/// Pulses applied and pairs refreshed by one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub pulses: u64,
    pub refreshes: u64,
}

impl std::ops::AddAssign for UpdateCounts {
    fn add_assign(&mut self, o: Self) {
        self.pulses += o.pulses;
        self.refreshes += o.refreshes;
    }
}

#[inline]
fn step_device(
    pair: &mut CrossbarPair,
    k: usize,
    positive: bool,
    du: f64,
    traj: &Trajectory,
    linear: bool,
    refresh_at: Option<f64>,
) -> bool {
    let state = if positive {
        &mut pair.w_pos[k]
    } else {
        &mut pair.w_neg[k]
    };
    *state = if linear {
        (*state + du).clamp(0.0, 1.0)
    } else {
        traj.eval(traj.inverse(*state) + du)
    };
    pair.weights[k] = pair.scale * (pair.w_pos[k] - pair.w_neg[k]);
    match refresh_at {
        Some(th) if pair.w_pos[k] >= th || pair.w_neg[k] >= th => {
            pair.refresh(k);
            true
        }
        _ => false,
    }
}

/// Applies `lr * x_i * delta_j` to every crosspoint. `x` and `delta` are
/// clipped to `[-1, 1]`.
///
/// Surrogate backend: the pulse count is `k = round(N |x_i delta_j|)` (or the
/// unrounded value without quantization) and the signed step is
/// `lr * k / N`, so steps come in quanta of `lr / N`. With noise, every
/// crosspoint that received pulses also gets `sigma * z` in normalized
/// device units. The sign of the noisy step picks the device, which then
/// moves by its magnitude along the trajectory.
pub fn rpu_update(
    pair: &mut CrossbarPair,
    x: &[f64],
    delta: &[f64],
    plan: &UpdatePlan,
    lr: f64,
    rng: &mut StreamRng,
) -> Result<UpdateCounts> {
    if x.len() != pair.rows || delta.len() != pair.cols {
        return Err(Error::Shape(format!(
            "update of {}x{} crossbar with {} inputs and {} errors",
            pair.rows,
            pair.cols,
            x.len(),
            delta.len()
        )));
    }
    match plan.backend {
        Backend::Surrogate => Ok(surrogate_update(pair, x, delta, plan, lr, rng)),
        Backend::Stochastic => stochastic_update(pair, x, delta, plan, lr, rng),
    }
}

fn surrogate_update(
    pair: &mut CrossbarPair,
    x: &[f64],
    delta: &[f64],
    plan: &UpdatePlan,
    lr: f64,
    rng: &mut StreamRng,
) -> UpdateCounts {
    let n = plan.n_slots as f64;
    let linear = plan.trajectory.is_linear();
    let cols = pair.cols;
    let d: Vec<f64> = delta.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let mut counts = UpdateCounts::default();
    for (i, &xi) in x.iter().enumerate() {
        let xi = xi.clamp(-1.0, 1.0);
        if xi == 0.0 {
            continue;
        }
        for (j, &dj) in d.iter().enumerate() {
            let g = xi * dj;
            if g == 0.0 {
                continue;
            }
            let pulses = if plan.quantize {
                (n * g.abs()).round()
            } else {
                n * g.abs()
            };
            if pulses == 0.0 {
                continue;
            }
            let mut dw = (lr * pulses / n).copysign(g);
            if plan.sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                dw += plan.sigma * z;
            }
            counts.pulses += pulses.round() as u64;
            if step_device(
                pair,
                i * cols + j,
                dw > 0.0,
                dw.abs(),
                &plan.trajectory,
                linear,
                plan.refresh_at,
            ) {
                counts.refreshes += 1;
            }
        }
    }
    counts
}

fn stochastic_update(
    pair: &mut CrossbarPair,
    x: &[f64],
    delta: &[f64],
    plan: &UpdatePlan,
    lr: f64,
    rng: &mut StreamRng,
) -> Result<UpdateCounts> {
    let dev = plan
        .stochastic
        .as_ref()
        .ok_or_else(|| Error::Config("stochastic backend needs a prepared device".into()))?;
    let n = plan.n_slots;
    let pw = dev.fit.pw;
    let linear = plan.trajectory.is_linear();
    let encode_all = |vals: &[f64], rng: &mut StreamRng| -> Result<Vec<Option<BitTrain>>> {
        vals.iter()
            .map(|&v| {
                let p = v.abs().min(1.0);
                if p == 0.0 {
                    Ok(None)
                } else {
                    encode_with(p, n, pw, rng).map(Some)
                }
            })
            .collect()
    };
    let xt = encode_all(x, rng)?;
    let dt = encode_all(delta, rng)?;
    let cols = pair.cols;
    let mut counts = UpdateCounts::default();
    for (i, a) in xt.iter().enumerate() {
        let Some(a) = a else { continue };
        for (j, b) in dt.iter().enumerate() {
            let Some(b) = b else { continue };
            let train = and_overlap(a, b)?;
            let ones = train.count_ones();
            if ones == 0 {
                continue;
            }
            let dv = apply_train(VtState(0.0), &train, dev.policy, &dev.fit)?.0;
            counts.pulses += ones as u64;
            let positive = (x[i] > 0.0) == (delta[j] > 0.0);
            let du = lr * dv / dev.full_train;
            if step_device(
                pair,
                i * cols + j,
                positive,
                du,
                &plan.trajectory,
                linear,
                plan.refresh_at,
            ) {
                counts.refreshes += 1;
            }
        }
    }
    Ok(counts)
}
