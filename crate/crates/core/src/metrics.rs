// SPDX-License-Identifier: Apache-2.0

//! Per-sample energy and latency, and the comparative table across runs.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::DatasetKind;
use crate::error::{Error, Result};
use crate::pulse::{total_latency, GapPolicy, PulseProgram};
use crate::trainer::TrainReport;

/// Column layout version of [`comparative_table`].
pub const TABLE_SCHEMA: u32 = 1;

/// Energy of one program pulse.
///
/// A pulse dissipates for its whole width, so by default the energy scales
/// with `pw`; `e_pulse` is the value at `reference_pw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    pub e_pulse: f64,
    #[serde(rename = "reference_pw_s")]
    pub reference_pw: f64,
    pub width_scaled: bool,
}

/// Per-pulse energy at 5 us that puts the default MNIST N=500 true-gap run
/// at its reference per-sample energy (see `examples/energy_calibration.rs`).
pub const DEFAULT_E_PULSE: f64 = 2.31e-18;

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            e_pulse: DEFAULT_E_PULSE,
            reference_pw: 5e-6,
            width_scaled: true,
        }
    }
}

impl EnergyModel {
    pub fn constant(e_pulse: f64) -> Result<Self> {
        let m = EnergyModel {
            e_pulse,
            reference_pw: 1.0,
            width_scaled: false,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_pulse > 0.0 && self.e_pulse.is_finite()) {
            return Err(Error::Config(format!(
                "e_pulse must be positive, got {}",
                self.e_pulse
            )));
        }
        if !(self.reference_pw > 0.0) {
            return Err(Error::Config(
                "reference pulse width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The model for pulses of width `pw`.
    pub fn at_width(&self, pw: f64) -> EnergyModel {
        if !self.width_scaled {
            return *self;
        }
        EnergyModel {
            e_pulse: self.e_pulse * pw / self.reference_pw,
            reference_pw: pw,
            width_scaled: true,
        }
    }
}

pub fn energy_per_sample(avg_pulses: f64, model: &EnergyModel) -> Result<f64> {
    if !(avg_pulses >= 0.0) {
        return Err(Error::Domain(format!(
            "pulse count must be non-negative, got {avg_pulses}"
        )));
    }
    Ok(avg_pulses * model.e_pulse)
}

pub fn latency_per_sample(prog: &PulseProgram) -> Duration {
    total_latency(prog)
}

/// Milliseconds as a float, exact for whole nanoseconds up to 2^53 ns.
pub fn millis(d: Duration) -> f64 {
    d.as_nanos() as f64 / 1e6
}

/// The comparative table as delimited and structured text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDocument {
    pub csv: String,
    pub json: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum RowKey {
    Pulses(usize),
    Ideal,
}

#[derive(Debug, Clone, Default)]
struct Cell {
    latency_ms: Option<f64>,
    energy_j: Option<f64>,
    accuracy: Option<f64>,
    accuracy_sd: Option<f64>,
    sigma: Option<f64>,
}

const METRICS: [&str; 5] = [
    "latency_ms",
    "energy_j",
    "accuracy_pct",
    "accuracy_sd",
    "sigma",
];

impl Cell {
    fn from_report(r: &TrainReport) -> Self {
        Cell {
            latency_ms: Some(r.latency_per_sample_ms),
            energy_j: Some(r.energy_per_sample_j),
            accuracy: Some(r.accuracy_mean),
            accuracy_sd: Some(r.accuracy_sd),
            sigma: r.sigma,
        }
    }

    fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "latency_ms" => self.latency_ms,
            "energy_j" => self.energy_j,
            "accuracy_pct" => self.accuracy,
            "accuracy_sd" => self.accuracy_sd,
            "sigma" => self.sigma,
            _ => None,
        }
    }
}

fn text(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "n/a".to_string(),
    }
}

fn value(v: Option<f64>) -> Value {
    match v {
        Some(x) => json!(x),
        None => json!("n/a"),
    }
}

/// Lays reports out as dataset x N x metric rows with a true-gap and a
/// sparse-gap column. Reports of the software reference fill the `ideal`
/// rows (true-gap column). A later report for the same cell replaces an
/// earlier one.
pub fn comparative_table(reports: &[TrainReport]) -> Result<TableDocument> {
    if reports.is_empty() {
        return Err(Error::Config(
            "comparative table needs at least one report".into(),
        ));
    }
    let mut grid: BTreeMap<(DatasetKind, RowKey), [Cell; 2]> = BTreeMap::new();
    for r in reports {
        let rule = &r.config.rule;
        let (key, col) = if rule.is_ideal() {
            (RowKey::Ideal, 0)
        } else {
            let col = match rule.policy {
                GapPolicy::Sparse => 1,
                _ => 0,
            };
            (RowKey::Pulses(rule.n_slots), col)
        };
        grid.entry((r.config.dataset, key)).or_default()[col] = Cell::from_report(r);
    }

    let mut csv = String::from("dataset,n,metric,true_gap,sparse_gap\n");
    let mut rows = Vec::new();
    for ((dataset, key), cells) in &grid {
        let n = match key {
            RowKey::Pulses(n) => n.to_string(),
            RowKey::Ideal => "ideal".to_string(),
        };
        for metric in METRICS {
            let (t, s) = (cells[0].get(metric), cells[1].get(metric));
            csv.push_str(&format!("{dataset},{n},{metric},{},{}\n", text(t), text(s)));
            rows.push(json!({
                "dataset": dataset.to_string(),
                "n": n,
                "metric": metric,
                "true_gap": value(t),
                "sparse_gap": value(s),
            }));
        }
    }
    let doc = json!({
        "schema_version": TABLE_SCHEMA,
        "energy_counts": "applied program pulses (coincident slots after AND)",
        "rows": rows,
    });
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("table document: {e}")))?
        + "\n";
    Ok(TableDocument { csv, json })
}
