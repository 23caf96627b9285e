// SPDX-License-Identifier: Apache-2.0

//! `ctf-rpu`: runs the simulator's experiments from a TOML configuration
//! and command-line overrides.
//!
//! Exit status: 0 success, 2 configuration error, 3 data error,
//! 4 model-validity error, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand};

use ctf_rpu::dataset::DatasetKind;
use ctf_rpu::exec::ExecMode;
use ctf_rpu::experiment::{run, Command, ExperimentConfig};
use ctf_rpu::metrics::{latency_per_sample, millis};
use ctf_rpu::pulse::{build_program_with, GapPolicy, NonVolatileSpec, ProgramOptions, SchemeId};
use ctf_rpu::stochastic::{error_budget, BudgetOptions};
use ctf_rpu::trainer::{Backend, UpdateRule};
use ctf_rpu::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ctf-rpu",
    version,
    about = "Charge-trap-flash RPU training simulator"
)]
struct Cli {
    /// Experiment configuration (TOML); manifests written by earlier runs
    /// are valid configurations.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding `mnist/` and `fashion/`.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Device family TOML replacing the built-in fixture.
    #[arg(long, global = true)]
    fixture: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Calibrate device fits from samples (or refit the fixture).
    Fit(FitArgs),
    /// Mean and spread of the threshold-voltage change over p, N, policy.
    Stats(StatsArgs),
    /// Stochastic, threshold-voltage and compensated error versus N.
    Errorfloor(ErrorFloorArgs),
    /// Train the network and report accuracy, latency and energy.
    Train(TrainArgs),
    /// Noise x nonlinearity x gap-policy grid at one pulse count.
    Ablate(TrainArgs),
    /// Comparative table of training reports.
    Table(TableArgs),
    /// Re-run the command recorded in a manifest given with --config.
    Run,
    /// Print one pulse program and its latency.
    Program(ProgramArgs),
    /// Print the default configuration.
    Defaults,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    t_critical_ms: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    policy: Option<Vec<GapPolicy>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    t_on_ms: Option<f64>,
}

#[derive(Args, Debug)]
struct ErrorFloorArgs {
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    policy: Option<GapPolicy>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    t_on_ms: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<DatasetKind>,
    /// Pulse slots per update.
    #[arg(long)]
    n: Option<usize>,
    /// `true`, `sparse`, or `ideal` for floating-point SGD.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    noise: Option<bool>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    nonlinearity: Option<bool>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    quantize: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seeds: Option<usize>,
    /// Training subset size.
    #[arg(long)]
    subsample: Option<usize>,
    /// Test subset size.
    #[arg(long)]
    test_n: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    weight_scale: Option<f64>,
    #[arg(long)]
    refresh: Option<f64>,
}

#[derive(Args, Debug)]
struct TableArgs {
    /// Report files; every `train_*.json` in the output directory when empty.
    reports: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct ProgramArgs {
    #[arg(long)]
    scheme: SchemeId,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2.5)]
    t_on_ms: f64,
    #[arg(long)]
    t_de_trap_ms: Option<f64>,
    /// Non-volatile writing time; with --n-req overrides the device-model
    /// estimate of the trap time.
    #[arg(long, requires = "n_req")]
    t_nv_ms: Option<f64>,
    #[arg(long, requires = "t_nv_ms")]
    n_req: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Model(Error),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Model(e) => match e {
                Error::Config(_) | Error::Domain(_) => 2,
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::Calibration(_)
                | Error::Shape(_) => 3,
                Error::ModelValidity(_) | Error::InfeasibleCompensation(_) => 4,
            },
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Model(e) => write!(f, "{e}"),
            Failure::Other(m) => f.write_str(m),
        }
    }
}

fn duration_ms(ms: f64) -> Result<Duration, Error> {
    if !(ms >= 0.0 && ms.is_finite()) {
        return Err(Error::Config(format!(
            "duration must be non-negative, got {ms} ms"
        )));
    }
    Ok(Duration::from_nanos((ms * 1e6).round() as u64))
}

fn apply_train_args(c: &mut ExperimentConfig, a: &TrainArgs) -> Result<(), Error> {
    let t = &mut c.train;
    if let Some(d) = a.dataset {
        t.dataset = d;
    }
    if let Some(p) = &a.policy {
        if p.eq_ignore_ascii_case("ideal") {
            t.rule = UpdateRule::ideal();
        } else {
            t.rule.policy = p.parse()?;
        }
    }
    if let Some(n) = a.n {
        t.rule.n_slots = n;
    }
    if let Some(v) = a.noise {
        t.rule.noise = v;
    }
    if let Some(v) = a.nonlinearity {
        t.rule.nonlinearity = v;
    }
    if let Some(v) = a.quantize {
        t.rule.quantize = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.seeds {
        t.seeds = v;
    }
    if let Some(v) = a.subsample {
        t.subsample_n = Some(v);
    }
    if let Some(v) = a.test_n {
        t.test_n = Some(v);
    }
    if let Some(v) = a.hidden {
        t.hidden_units = v;
    }
    if let Some(b) = &a.backend {
        t.backend = match b.to_ascii_lowercase().as_str() {
            "surrogate" => Backend::Surrogate,
            "stochastic" => Backend::Stochastic,
            other => {
                return Err(Error::Config(format!(
                    "unknown backend {other:?}; expected surrogate or stochastic"
                )))
            }
        };
    }
    if let Some(v) = a.weight_scale {
        t.weight_scale = v;
    }
    if let Some(v) = a.refresh {
        t.refresh_threshold = v;
    }
    Ok(())
}

fn program(c: &ExperimentConfig, a: &ProgramArgs) -> Result<(), Error> {
    let family = c.family()?;
    let t_on = duration_ms(a.t_on_ms)?;
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let pw = t_on.as_secs_f64() / a.n as f64;
    let fit = family.at_pulse_width(pw)?;
    let spec = match (a.t_nv_ms, a.n_req) {
        (Some(t_nv), Some(n_req)) => NonVolatileSpec::new(t_nv * 1e-3, n_req)?,
        _ => {
            let opts = BudgetOptions {
                t_on: t_on.as_secs_f64(),
                ..BudgetOptions::default()
            };
            let budget = error_budget(a.n, &family, GapPolicy::Sparse, &opts)?;
            NonVolatileSpec::new(
                t_on.as_secs_f64(),
                t_on.as_secs_f64() / (pw - budget.t_trap),
            )?
        }
    };
    let opts = ProgramOptions {
        t_de_trap: match a.t_de_trap_ms {
            Some(ms) => Some(duration_ms(ms)?),
            None => Some(Duration::from_secs_f64(family.max_t_critical())),
        },
        ..ProgramOptions::default()
    };
    let prog = build_program_with(a.scheme, a.n, t_on, &fit, &spec, &opts)?;
    print!("{}", prog.to_toml());
    println!("latency_ms = {}", millis(latency_per_sample(&prog)));
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &cli.out {
        config.output_dir = v.clone();
    }
    if let Some(v) = &cli.data_dir {
        config.data_dir = v.clone();
    }
    if let Some(v) = &cli.fixture {
        config.fixture = Some(v.clone());
    }
    if let Some(v) = cli.seed {
        config.seed = v;
    }

    #[cfg(feature = "parallel")]
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| Failure::Other(format!("worker pool: {e}")))?;
    }
    let mode = if cli.sequential || cli.workers == 1 {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };

    let command = match &cli.command {
        Cmd::Fit(a) => {
            if let Some(v) = &a.samples {
                config.fit.samples = Some(v.clone());
            }
            if let Some(v) = a.t_critical_ms {
                config.fit.t_critical = Some(v * 1e-3);
            }
            if let Some(v) = a.noise {
                config.fit.noise = v;
            }
            Command::Fit
        }
        Cmd::Stats(a) => {
            let s = &mut config.stats;
            if let Some(v) = &a.p {
                s.ps = v.clone();
            }
            if let Some(v) = &a.n {
                s.ns = v.clone();
            }
            if let Some(v) = &a.policy {
                s.policies = v.clone();
            }
            if let Some(v) = a.runs {
                s.runs = v;
            }
            if let Some(v) = a.t_on_ms {
                s.t_on = v * 1e-3;
            }
            Command::Stats
        }
        Cmd::Errorfloor(a) => {
            let e = &mut config.errorfloor;
            if let Some(v) = a.n_min {
                e.n_min = v;
            }
            if let Some(v) = a.n_max {
                e.n_max = v;
            }
            if let Some(v) = a.policy {
                e.policy = v;
            }
            if let Some(v) = a.k {
                e.k = v;
            }
            if let Some(v) = a.t_on_ms {
                e.t_on = v * 1e-3;
            }
            Command::Errorfloor
        }
        Cmd::Train(a) => {
            apply_train_args(&mut config, a)?;
            Command::Train
        }
        Cmd::Ablate(a) => {
            apply_train_args(&mut config, a)?;
            if let Some(n) = a.n {
                config.ablate.n_slots = n;
            }
            Command::Ablate
        }
        Cmd::Table(a) => {
            if !a.reports.is_empty() {
                config.table.reports = a.reports.clone();
            }
            Command::Table
        }
        Cmd::Run => config.command.ok_or_else(|| {
            Error::Config("`run` needs a manifest with a `command` entry (--config)".into())
        })?,
        Cmd::Program(a) => return Ok(program(&config, a)?),
        Cmd::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml());
            return Ok(());
        }
    };

    let outcome = run(&config, command, mode)?;
    for f in &outcome.files {
        println!("{}", config.output_dir.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
