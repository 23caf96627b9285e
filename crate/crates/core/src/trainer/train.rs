// SPDX-License-Identifier: Apache-2.0

//! Training runs, seed aggregation and the noise/nonlinearity ablation grid.

use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::crossbar::{rpu_update, Backend, CrossbarPair, UpdateCounts, UpdatePlan, UpdateRule};
use super::network::{argmax, Activation, Activations, Deltas, Network};
use crate::dataset::{subsample, DatasetKind, ImageSet, Normalization};
use crate::device::FitFamily;
use crate::error::{Error, Result};
use crate::exec::{compensated_sum, map_indexed, mean_and_sd, ExecMode};
use crate::metrics::{energy_per_sample, latency_per_sample, millis, EnergyModel};
use crate::pulse::{program_for_policy, GapPolicy};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Base seed; run `r` uses a seed derived from it.
    pub seed: u64,
    /// Independent runs aggregated into mean and standard deviation.
    pub seeds: usize,
    pub rule: UpdateRule,
    pub backend: Backend,
    /// Stratified training subset size; the full set when absent.
    pub subsample_n: Option<usize>,
    /// Stratified test subset size; the full set when absent.
    pub test_n: Option<usize>,
    pub activation: Activation,
    pub normalization: Normalization,
    /// Effective weight of a fully programmed device.
    pub weight_scale: f64,
    /// Initial weights are uniform in `+-init_gain / sqrt(fan_in)`.
    pub init_gain: f64,
    /// A pair is re-written to its difference once either state reaches
    /// this level; values above 1 disable refresh.
    pub refresh_threshold: f64,
    #[serde(rename = "t_on_s")]
    pub t_on: f64,
    pub energy: EnergyModel,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetKind::Mnist,
            hidden_units: 1280,
            epochs: 10,
            learning_rate: 0.3,
            seed: 1,
            seeds: 3,
            rule: UpdateRule::new(1000, GapPolicy::True, true, true),
            backend: Backend::Surrogate,
            subsample_n: None,
            test_n: None,
            activation: Activation::Sigmoid,
            normalization: Normalization::Unit,
            weight_scale: 1.0,
            init_gain: 1.0,
            refresh_threshold: 0.9,
            t_on: 2.5e-3,
            energy: EnergyModel::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.hidden_units == 0 {
            return bad("hidden_units", "must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            );
        }
        if self.seeds == 0 {
            return bad("seeds", "must be at least 1".into());
        }
        if !(self.weight_scale > 0.0) {
            return bad(
                "weight_scale",
                format!("must be positive, got {}", self.weight_scale),
            );
        }
        if !(self.init_gain >= 0.0) {
            return bad(
                "init_gain",
                format!("must be non-negative, got {}", self.init_gain),
            );
        }
        if !(self.refresh_threshold > 0.0) {
            return bad(
                "refresh_threshold",
                format!("must be positive, got {}", self.refresh_threshold),
            );
        }
        if !(self.t_on > 0.0) {
            return bad("t_on_s", format!("must be positive, got {}", self.t_on));
        }
        if self.subsample_n == Some(0) || self.test_n == Some(0) {
            return bad("subsample_n/test_n", "must be at least 1 when given".into());
        }
        self.energy.validate()?;
        self.rule.validate()
    }

    fn refresh_at(&self) -> Option<f64> {
        (self.refresh_threshold <= 1.0).then_some(self.refresh_threshold)
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }
}

/// Training and test images.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: ImageSet,
    pub test: ImageSet,
}

impl TrainData {
    /// Applies the configured stratified subsets.
    pub fn for_config(&self, config: &TrainConfig) -> Result<TrainData> {
        let pick = |set: &ImageSet, n: Option<usize>, label: u64| match n {
            Some(n) if n < set.len() => subsample(set, n, derive_seed(config.seed, label)),
            Some(n) if n > set.len() => Err(Error::Domain(format!(
                "requested {n} images from a set of {}",
                set.len()
            ))),
            _ => Ok(set.clone()),
        };
        Ok(TrainData {
            train: pick(&self.train, config.subsample_n, 0x7472)?,
            test: pick(&self.test, config.test_n, 0x7465)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub epoch_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    /// Program pulses applied per training sample, both layers.
    pub pulses_per_sample: f64,
    pub refreshes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub runs: Vec<SeedRun>,
    pub epoch_accuracy_mean: Vec<f64>,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub pulses_per_sample: f64,
    /// Noise level injected per update, when noise is on.
    pub sigma: Option<f64>,
    pub latency_per_sample_ms: f64,
    pub energy_per_sample_j: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `epoch,mean,run_0,run_1,...` accuracy table.
    pub fn epoch_table(&self) -> String {
        let mut s = String::from("epoch,mean");
        for r in 0..self.runs.len() {
            s.push_str(&format!(",run_{r}"));
        }
        s.push('\n');
        for (e, m) in self.epoch_accuracy_mean.iter().enumerate() {
            s.push_str(&format!("{},{m}", e + 1));
            for run in &self.runs {
                s.push_str(&format!(",{}", run.epoch_accuracy[e]));
            }
            s.push('\n');
        }
        s
    }
}

pub fn init_network(
    config: &TrainConfig,
    inputs: usize,
    outputs: usize,
    seed: u64,
) -> Result<Network> {
    let h = config.hidden_units;
    let r1 = config.init_gain / ((inputs + 1) as f64).sqrt();
    let r2 = config.init_gain / ((h + 1) as f64).sqrt();
    let hidden =
        CrossbarPair::random(inputs + 1, h, config.weight_scale, r1, derive_seed(seed, 1))?;
    let output = CrossbarPair::random(
        h + 1,
        outputs,
        config.weight_scale,
        r2,
        derive_seed(seed, 2),
    )?;
    Network::new(hidden, output, config.activation)
}

/// Test accuracy in percent.
pub fn evaluate(net: &Network, set: &ImageSet, norm: Normalization, mode: ExecMode) -> f64 {
    const CHUNK: usize = 256;
    let chunks = set.len().div_ceil(CHUNK);
    let correct: usize = map_indexed(mode, chunks, |c| {
        let mut acts = Activations::default();
        let mut x = vec![0.0; set.pixels_per_image()];
        let mut hits = 0;
        for i in c * CHUNK..((c + 1) * CHUNK).min(set.len()) {
            set.image_into(i, norm, &mut x);
            if net.forward_into(&x, &mut acts).is_ok() && argmax(&acts.output) == set.label(i) {
                hits += 1;
            }
        }
        hits
    })
    .into_iter()
    .sum();
    100.0 * correct as f64 / set.len().max(1) as f64
}

/// One seed: per-sample SGD with crossbar updates, evaluated after every
/// epoch.
pub fn train_seed(
    config: &TrainConfig,
    plan: &UpdatePlan,
    data: &TrainData,
    seed: u64,
    mode: ExecMode,
) -> Result<SeedRun> {
    let inputs = data.train.pixels_per_image();
    let mut net = init_network(config, inputs, crate::dataset::CLASSES, seed)?;
    let mut acts = Activations::default();
    let mut deltas = Deltas::default();
    let mut x = vec![0.0; inputs];
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut counts = UpdateCounts::default();
    let mut epoch_accuracy = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(seed, 1 + 2 * epoch as u64));
        let mut noise = stream_rng(seed, 2 + 2 * epoch as u64);
        for &i in &order {
            data.train.image_into(i, config.normalization, &mut x);
            net.forward_into(&x, &mut acts)?;
            net.backward_into(&acts, data.train.label(i), &mut deltas)?;
            counts += rpu_update(
                &mut net.output,
                &acts.hidden,
                &deltas.output,
                plan,
                config.learning_rate,
                &mut noise,
            )?;
            counts += rpu_update(
                &mut net.hidden,
                &acts.input,
                &deltas.hidden,
                plan,
                config.learning_rate,
                &mut noise,
            )?;
        }
        epoch_accuracy.push(evaluate(&net, &data.test, config.normalization, mode));
    }
    let samples = (config.epochs * data.train.len()).max(1);
    Ok(SeedRun {
        seed,
        final_accuracy: epoch_accuracy.last().copied().unwrap_or(0.0),
        epoch_accuracy,
        pulses_per_sample: counts.pulses as f64 / samples as f64,
        refreshes: counts.refreshes,
    })
}

/// Trains `config.seeds` independent runs and aggregates them.
pub fn train(
    config: &TrainConfig,
    data: &TrainData,
    family: &FitFamily,
    mode: ExecMode,
) -> Result<TrainReport> {
    config.validate()?;
    let data = data.for_config(config)?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Config(
            "training and test sets must be non-empty".into(),
        ));
    }
    let plan = UpdatePlan::prepare(
        &config.rule,
        family,
        config.t_on,
        config.backend,
        config.refresh_at(),
        derive_seed(config.seed, 0x7472_616a),
        mode,
    )?;
    let runs: Vec<SeedRun> = map_indexed(mode, config.seeds, |r| {
        train_seed(
            config,
            &plan,
            &data,
            config.run_seed(r),
            ExecMode::Sequential,
        )
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let finals: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
    let (accuracy_mean, accuracy_sd) = mean_and_sd(&finals);
    let epoch_accuracy_mean = (0..config.epochs)
        .map(|e| compensated_sum(runs.iter().map(|r| r.epoch_accuracy[e])) / runs.len() as f64)
        .collect();
    let pulses_per_sample =
        compensated_sum(runs.iter().map(|r| r.pulses_per_sample)) / runs.len() as f64;

    let n = config.rule.n_slots;
    let t_on = Duration::from_nanos((config.t_on * 1e9).round() as u64);
    let program = program_for_policy(config.rule.policy, n, t_on, family)?;
    let energy = energy_per_sample(
        pulses_per_sample,
        &config.energy.at_width(config.t_on / n as f64),
    )?;
    Ok(TrainReport {
        config: config.clone(),
        train_samples: data.train.len(),
        test_samples: data.test.len(),
        runs,
        epoch_accuracy_mean,
        accuracy_mean,
        accuracy_sd,
        pulses_per_sample,
        sigma: if config.rule.noise {
            Some(config.rule.sigma()?)
        } else {
            None
        },
        latency_per_sample_ms: millis(latency_per_sample(&program)),
        energy_per_sample_j: energy,
    })
}

/// The eight ablation configurations at `base.rule.n_slots`: noise on/off,
/// nonlinearity on/off, true/sparse gaps, in that nesting order.
pub fn ablation_configs(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut out = Vec::with_capacity(8);
    for policy in [GapPolicy::True, GapPolicy::Sparse] {
        for noise in [true, false] {
            for nonlinearity in [true, false] {
                let mut c = base.clone();
                c.rule.policy = policy;
                c.rule.noise = noise;
                c.rule.nonlinearity = nonlinearity;
                c.rule.quantize = true;
                out.push(c);
            }
        }
    }
    out
}

/// Runs the ablation grid; reports are returned ranked by mean accuracy,
/// best first (ties keep grid order).
pub fn ablate(
    base: &TrainConfig,
    data: &TrainData,
    family: &FitFamily,
    mode: ExecMode,
) -> Result<Vec<TrainReport>> {
    let mut reports = ablation_configs(base)
        .iter()
        .map(|c| train(c, data, family, mode))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| b.accuracy_mean.total_cmp(&a.accuracy_mean));
    Ok(reports)
}
