// SPDX-License-Identifier: Apache-2.0

//! Experiment documents and the runner behind the command line.
//!
//! An [`ExperimentConfig`] is a TOML document with one section per command.
//! Every run writes its result files plus a manifest, which is the resolved
//! configuration with the command and crate version filled in. Feeding a
//! manifest back as the configuration reproduces the result files byte for
//! byte.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dir, DatasetKind, Split};
use crate::device::{fit_from_samples, generate_samples, FitFamily, FitSample};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::fixture::default_family;
use crate::metrics::comparative_table;
use crate::pulse::GapPolicy;
use crate::rng::{derive_seed, stream_rng};
use crate::stochastic::{errorfloor_sweep, stats_sweep, BudgetOptions, BudgetRow, StatsRow};
use crate::trainer::{ablate, train, TrainConfig, TrainData, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Fit,
    Stats,
    Errorfloor,
    Train,
    Ablate,
    Table,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Fit,
        Command::Stats,
        Command::Errorfloor,
        Command::Train,
        Command::Ablate,
        Command::Table,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Stats => "stats",
            Command::Errorfloor => "errorfloor",
            Command::Train => "train",
            Command::Ablate => "ablate",
            Command::Table => "table",
        }
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Device calibration. Without `samples` the default fixture is sampled on
/// a grid, perturbed by multiplicative Gaussian noise and refitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// CSV with columns `vt,t_gap,pw,dvt_observed` (seconds and volts).
    pub samples: Option<PathBuf>,
    #[serde(rename = "t_critical_s")]
    pub t_critical: Option<f64>,
    /// Relative noise of synthetic samples.
    pub noise: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            samples: None,
            t_critical: None,
            noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    pub ps: Vec<f64>,
    pub ns: Vec<usize>,
    pub policies: Vec<GapPolicy>,
    pub runs: usize,
    #[serde(rename = "t_on_s")]
    pub t_on: f64,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            ps: vec![0.0, 0.2, 0.4, 0.8, 1.0],
            ns: vec![25, 100, 500, 1000],
            policies: GapPolicy::ALL.to_vec(),
            runs: 1000,
            t_on: 2.5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorFloorSection {
    pub n_min: usize,
    pub n_max: usize,
    pub policy: GapPolicy,
    /// Stochastic error constant in `k / sqrt(N)`.
    pub k: f64,
    #[serde(rename = "t_on_s")]
    pub t_on: f64,
}

impl Default for ErrorFloorSection {
    fn default() -> Self {
        ErrorFloorSection {
            n_min: 1,
            n_max: 1000,
            policy: GapPolicy::Sparse,
            k: 1.0,
            t_on: 2.5e-3,
        }
    }
}

/// The ablation grid runs the `train` section at this pulse count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub n_slots: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { n_slots: 100 }
    }
}

/// Reports to tabulate; empty means every `train_*.json` in the output
/// directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSection {
    pub reports: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Set in manifests.
    pub command: Option<Command>,
    /// Crate version that wrote a manifest.
    pub version: Option<String>,
    /// Seed of the Monte-Carlo commands.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Holds `mnist/` and `fashion/` with the standard IDX file names.
    pub data_dir: PathBuf,
    /// Device family TOML; the built-in fixture when absent.
    pub fixture: Option<PathBuf>,
    pub fit: FitSection,
    pub stats: StatsSection,
    pub errorfloor: ErrorFloorSection,
    pub train: TrainConfig,
    pub ablate: AblateSection,
    pub table: TableSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            version: None,
            seed: 2024,
            output_dir: PathBuf::from("results"),
            data_dir: PathBuf::from("data"),
            fixture: None,
            fit: FitSection::default(),
            stats: StatsSection::default(),
            errorfloor: ErrorFloorSection::default(),
            train: TrainConfig::default(),
            ablate: AblateSection::default(),
            table: TableSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(config_err)?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks the sections `command` reads.
    pub fn validate(&self, command: Command) -> Result<()> {
        match command {
            Command::Fit => {
                let f = &self.fit;
                if !(f.noise >= 0.0 && f.noise < 1.0) {
                    return Err(Error::Config(format!(
                        "fit.noise must be in [0, 1), got {}",
                        f.noise
                    )));
                }
                if let Some(tc) = f.t_critical {
                    if !(tc > 0.0) {
                        return Err(Error::Config(format!(
                            "fit.t_critical_s must be positive, got {tc}"
                        )));
                    }
                }
            }
            Command::Stats => {
                let s = &self.stats;
                if s.ps.is_empty() || s.ns.is_empty() || s.policies.is_empty() {
                    return Err(Error::Config(
                        "stats: ps, ns and policies must be non-empty".into(),
                    ));
                }
                if let Some(p) = s.ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(Error::Config(format!("stats.ps: {p} is not a probability")));
                }
                if s.ns.contains(&0) {
                    return Err(Error::Config(
                        "stats.ns: pulse counts must be at least 1".into(),
                    ));
                }
                if s.runs < 2 {
                    return Err(Error::Config(format!(
                        "stats.runs must be at least 2, got {}",
                        s.runs
                    )));
                }
                if !(s.t_on > 0.0) {
                    return Err(Error::Config("stats.t_on_s must be positive".into()));
                }
            }
            Command::Errorfloor => {
                let e = &self.errorfloor;
                if e.n_min == 0 || e.n_min > e.n_max {
                    return Err(Error::Config(format!(
                        "errorfloor: need 1 <= n_min <= n_max, got {}..{}",
                        e.n_min, e.n_max
                    )));
                }
                if !(e.k > 0.0) || !(e.t_on > 0.0) {
                    return Err(Error::Config(
                        "errorfloor: k and t_on_s must be positive".into(),
                    ));
                }
            }
            Command::Train => self.train.validate()?,
            Command::Ablate => {
                if self.ablate.n_slots == 0 {
                    return Err(Error::Config("ablate.n_slots must be at least 1".into()));
                }
                self.train.validate()?;
            }
            Command::Table => {}
        }
        Ok(())
    }

    pub fn family(&self) -> Result<FitFamily> {
        match &self.fixture {
            Some(path) => FitFamily::read(path),
            None => Ok(default_family()),
        }
    }

    pub fn dataset_dir(&self, kind: DatasetKind) -> PathBuf {
        self.data_dir.join(match kind {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fashion",
        })
    }

    pub fn load_data(&self, kind: DatasetKind) -> Result<TrainData> {
        let dir = self.dataset_dir(kind);
        Ok(TrainData {
            train: load_dir(&dir, Split::Train)?,
            test: load_dir(&dir, Split::Test)?,
        })
    }

    /// The configuration as it is recorded next to the results of `command`.
    /// The output location is left at its default so that a copy of the
    /// results written elsewhere carries the same manifest.
    pub fn manifest(&self, command: Command) -> ExperimentConfig {
        ExperimentConfig {
            command: Some(command),
            version: Some(env!("CARGO_PKG_VERSION").to_string()),
            output_dir: ExperimentConfig::default().output_dir,
            ..self.clone()
        }
    }
}

/// File name stem of a training run.
pub fn run_tag(config: &TrainConfig) -> String {
    let rule = &config.rule;
    let mut tag = format!("train_{}", config.dataset);
    if rule.is_ideal() {
        tag.push_str("_ideal");
        return tag;
    }
    tag.push_str(&format!("_n{}_{}", rule.n_slots, rule.policy));
    if !rule.noise {
        tag.push_str("_nonoise");
    }
    if !rule.nonlinearity {
        tag.push_str("_linear");
    }
    if !rule.quantize {
        tag.push_str("_unquantized");
    }
    tag
}

/// Files written by one run, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Writer {
            dir,
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    fn finish(self) -> Outcome {
        Outcome { files: self.files }
    }
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(config_err)?;
    }
    let bytes = w.into_inner().map_err(config_err)?;
    String::from_utf8(bytes).map_err(config_err)
}

fn read_samples(path: &Path) -> Result<Vec<FitSample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                offset: e.position().map_or(0, |p| p.byte()),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Grid-sampled increments of every fit in `family`, each scaled by
/// `1 + noise * z`.
pub fn synthetic_samples(family: &FitFamily, noise: f64, seed: u64) -> Vec<FitSample> {
    let vts: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::new();
    for fit in family.fits() {
        let tc = fit.t_critical;
        let gaps: Vec<f64> = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
            .iter()
            .map(|m| m * tc)
            .collect();
        for mut s in generate_samples(fit, &vts, &gaps) {
            let z: f64 = rng.sample(StandardNormal);
            s.dvt_observed *= 1.0 + noise * z;
            out.push(s);
        }
    }
    out
}

/// Groups samples by pulse width and fits each group.
pub fn fit_family(samples: &[FitSample], t_critical: Option<f64>) -> Result<FitFamily> {
    let mut widths: Vec<f64> = Vec::new();
    for s in samples {
        if !widths
            .iter()
            .any(|w| (w - s.pw).abs() <= 1e-12 * s.pw.abs())
        {
            widths.push(s.pw);
        }
    }
    let fits = widths
        .iter()
        .map(|&pw| {
            let group: Vec<FitSample> = samples
                .iter()
                .filter(|s| (s.pw - pw).abs() <= 1e-12 * pw.abs())
                .copied()
                .collect();
            fit_from_samples(&group, t_critical)
        })
        .collect::<Result<Vec<_>>>()?;
    FitFamily::new(fits)
}

fn train_reports_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("train_") && name.ends_with(".json") {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

pub fn read_report(path: &Path) -> Result<TrainReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("line {}, column {}: {e}", e.line(), e.column()),
    })
}

/// Runs `command` and writes its results and manifest into the output
/// directory.
pub fn run(config: &ExperimentConfig, command: Command, mode: ExecMode) -> Result<Outcome> {
    config.validate(command)?;
    let dir = config.output_dir.as_path();
    let mut out = Writer::new(dir)?;
    let manifest = config.manifest(command).to_toml();
    match command {
        Command::Fit => {
            let (samples, synthetic) = match &config.fit.samples {
                Some(path) => (read_samples(path)?, false),
                None => (
                    synthetic_samples(
                        &config.family()?,
                        config.fit.noise,
                        derive_seed(config.seed, 0x666974),
                    ),
                    true,
                ),
            };
            let family = fit_family(&samples, config.fit.t_critical)?;
            out.put("fits.toml", &family.to_toml())?;
            out.put("fits.csv", &csv_rows(family.fits())?)?;
            if synthetic {
                out.put("fit_samples.csv", &csv_rows(&samples)?)?;
            }
            out.put("fit.manifest.toml", &manifest)?;
        }
        Command::Stats => {
            let s = &config.stats;
            let stats = stats_sweep(
                &config.family()?,
                &s.ps,
                &s.ns,
                &s.policies,
                s.t_on,
                s.runs,
                config.seed,
                mode,
            )?;
            let rows: Vec<StatsRow> = stats.iter().map(StatsRow::from).collect();
            out.put("stats.csv", &csv_rows(&rows)?)?;
            out.put("stats.manifest.toml", &manifest)?;
        }
        Command::Errorfloor => {
            let e = &config.errorfloor;
            let ns: Vec<usize> = (e.n_min..=e.n_max).collect();
            let opts = BudgetOptions {
                k: e.k,
                t_on: e.t_on,
                ..BudgetOptions::default()
            };
            let budgets = errorfloor_sweep(&config.family()?, &ns, e.policy, &opts, mode)?;
            let rows: Vec<BudgetRow> = budgets.iter().map(BudgetRow::from).collect();
            out.put("errorfloor.csv", &csv_rows(&rows)?)?;
            out.put("errorfloor.manifest.toml", &manifest)?;
        }
        Command::Train => {
            let data = config.load_data(config.train.dataset)?;
            let report = train(&config.train, &data, &config.family()?, mode)?;
            let tag = run_tag(&config.train);
            out.put(&format!("{tag}.json"), &report.to_json())?;
            out.put(&format!("{tag}_epochs.csv"), &report.epoch_table())?;
            out.put(&format!("{tag}.manifest.toml"), &manifest)?;
        }
        Command::Ablate => {
            let mut base = config.train.clone();
            base.rule.n_slots = config.ablate.n_slots;
            let data = config.load_data(base.dataset)?;
            let reports = ablate(&base, &data, &config.family()?, mode)?;
            let mut csv =
                String::from("rank,policy,noise,nonlinearity,sigma,accuracy_mean,accuracy_sd\n");
            for (i, r) in reports.iter().enumerate() {
                let rule = &r.config.rule;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    i + 1,
                    rule.policy,
                    rule.noise,
                    rule.nonlinearity,
                    r.sigma.map_or("n/a".to_string(), |s| s.to_string()),
                    r.accuracy_mean,
                    r.accuracy_sd
                ));
            }
            let json = serde_json::to_string_pretty(&reports).map_err(config_err)? + "\n";
            out.put(
                &format!("ablate_{}_n{}.csv", base.dataset, base.rule.n_slots),
                &csv,
            )?;
            out.put(
                &format!("ablate_{}_n{}.json", base.dataset, base.rule.n_slots),
                &json,
            )?;
            out.put("ablate.manifest.toml", &manifest)?;
        }
        Command::Table => {
            let paths = if config.table.reports.is_empty() {
                train_reports_in(dir)?
            } else {
                config.table.reports.clone()
            };
            let reports = paths
                .iter()
                .map(|p| read_report(p))
                .collect::<Result<Vec<_>>>()?;
            let doc = comparative_table(&reports)?;
            out.put("table.csv", &doc.csv)?;
            out.put("table.json", &doc.json)?;
            out.put("table.manifest.toml", &manifest)?;
        }
    }
    Ok(out.finish())
}
