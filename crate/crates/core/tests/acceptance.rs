// SPDX-License-Identifier: Apache-2.0

//! End-to-end acceptance harness. Prints one `PASS`, `FAIL` or `SKIP` line
//! per criterion, with indented detail lines.
//!
//! Training criteria run on the reduced gate (5000 training and 2000 test
//! images, 256 hidden units). Set `CTF_FULL_SCALE=1` to also run the full
//! 60k/10k replication. `CTF_DATA_DIR` overrides the dataset root
//! (default: `data/` at the workspace root).

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{bits_of, reference_train, relative_gap};
use ctf_rpu::dataset::{load_dir, DatasetKind, Split};
use ctf_rpu::device::{DeviceFit, VtState};
use ctf_rpu::exec::ExecMode;
use ctf_rpu::experiment::{run, run_tag, Command, ExperimentConfig};
use ctf_rpu::fixture::{default_family, SPREAD_PROBE, T_ON};
use ctf_rpu::metrics::{energy_per_sample, latency_per_sample, millis, EnergyModel};
use ctf_rpu::pulse::{program_for_policy, GapPolicy};
use ctf_rpu::stochastic::{apply_train, errorfloor_sweep, update_stats, BitTrain, BudgetOptions};
use ctf_rpu::trainer::{train, TrainConfig, TrainData, TrainReport, UpdateRule};

const PAPER_ENERGY_N500_TRUE: f64 = 5.70e-14;
const GATE_BUDGET: Duration = Duration::from_secs(180);

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Ledger {
    lines: Vec<(String, Verdict)>,
}

impl Ledger {
    fn record(&mut self, id: &str, verdict: Verdict, summary: &str, details: &[String]) {
        let tag = match verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("{tag} criterion {id}: {summary}");
        for d in details {
            println!("    {d}");
        }
        self.lines.push((id.to_string(), verdict));
    }

    fn check(&mut self, id: &str, ok: bool, summary: &str, details: &[String]) {
        self.record(
            id,
            if ok { Verdict::Pass } else { Verdict::Fail },
            summary,
            details,
        );
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("CTF_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn load(kind: DatasetKind) -> Option<TrainData> {
    let dir = data_root().join(match kind {
        DatasetKind::Mnist => "mnist",
        DatasetKind::Fmnist => "fashion",
    });
    Some(TrainData {
        train: load_dir(&dir, Split::Train).ok()?,
        test: load_dir(&dir, Split::Test).ok()?,
    })
}

/// Training runs shared between criteria, keyed by file tag.
struct Runs {
    data: BTreeMap<DatasetKind, Option<TrainData>>,
    cache: BTreeMap<String, (TrainReport, Duration)>,
}

impl Runs {
    fn new() -> Self {
        Runs {
            data: BTreeMap::new(),
            cache: BTreeMap::new(),
        }
    }

    fn has(&mut self, kind: DatasetKind) -> bool {
        self.data
            .entry(kind)
            .or_insert_with(|| load(kind))
            .is_some()
    }

    fn get(&mut self, config: &TrainConfig) -> (TrainReport, Duration) {
        let key = format!(
            "{}_h{}_s{:?}",
            run_tag(config),
            config.hidden_units,
            config.subsample_n
        );
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let data = self
            .data
            .entry(config.dataset)
            .or_insert_with(|| load(config.dataset));
        let data = data.as_ref().expect("dataset present");
        let start = Instant::now();
        let report =
            train(config, data, &default_family(), ExecMode::Parallel).expect("training run");
        let hit = (report, start.elapsed());
        self.cache.insert(key, hit.clone());
        hit
    }
}

fn gate(dataset: DatasetKind, rule: UpdateRule) -> TrainConfig {
    TrainConfig {
        dataset,
        hidden_units: 256,
        epochs: 3,
        subsample_n: Some(5000),
        test_n: Some(2000),
        rule,
        ..TrainConfig::default()
    }
}

fn noisy(n: usize, policy: GapPolicy) -> UpdateRule {
    UpdateRule::new(n, policy, true, true)
}

fn describe(r: &TrainReport, t: Duration) -> String {
    format!(
        "{:<40} {:6.2} +- {:4.2} %   {:8.0} pulses/sample   {:.3e} J   [{:.1} s]",
        run_tag(&r.config),
        r.accuracy_mean,
        r.accuracy_sd,
        r.pulses_per_sample,
        r.energy_per_sample_j,
        t.as_secs_f64()
    )
}

fn criterion_1(l: &mut Ledger) {
    let family = default_family();
    let t_on = Duration::from_micros(2500);
    let expected = [
        (GapPolicy::True, 100, 2.5),
        (GapPolicy::True, 500, 2.5),
        (GapPolicy::True, 1000, 2.5),
        (GapPolicy::Sparse, 100, 1002.5),
        (GapPolicy::Sparse, 500, 5002.5),
        (GapPolicy::Sparse, 1000, 10002.5),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (policy, n, want) in expected {
        let got = millis(latency_per_sample(
            &program_for_policy(policy, n, t_on, &family).unwrap(),
        ));
        ok &= got == want;
        details.push(format!("{policy} N={n}: {got} ms (table {want} ms)"));
    }
    l.check(
        "1",
        ok,
        "latency per sample matches the table exactly",
        &details,
    );
}

fn criterion_2(l: &mut Ledger) {
    let fit = default_family().at_pulse_width(T_ON / 8.0).unwrap();
    let mut worst: f64 = 0.0;
    for mask in 0..256u64 {
        let bits = bits_of(mask, 8);
        let train = BitTrain::from_bits(&bits, fit.pw).unwrap();
        let got = apply_train(VtState(0.0), &train, GapPolicy::True, &fit)
            .unwrap()
            .0;
        worst = worst.max(relative_gap(got, reference_train(&bits, &fit, true, 0.0)));
    }
    l.check(
        "2",
        worst <= 1e-12,
        "true-gap train application equals the step-by-step transcription on all 256 N=8 trains",
        &[format!("largest relative difference {worst:.2e}")],
    );
}

fn criterion_3(l: &mut Ledger) {
    let family = default_family();
    let mut ok = true;
    let mut details = Vec::new();
    for n in [25usize, 100, 500, 1000] {
        let base = family.ideal_fit(T_ON / n as f64).unwrap();
        let fit = DeviceFit::new(
            base.pw,
            base.a_coeff,
            0.0,
            base.c1,
            base.c2,
            base.t_critical,
        )
        .unwrap();
        for p in [0.2, 0.4, 0.8] {
            let s =
                update_stats(p, n, GapPolicy::Ideal, &fit, 10_000, 3, ExecMode::Parallel).unwrap();
            let law = ((1.0 - p) / (n as f64 * p)).sqrt();
            let err = (s.cv - law).abs() / law;
            ok &= err <= 0.05;
            details.push(format!(
                "N={n:<4} p={p}: cv {:.5} vs {law:.5} ({:+.2} %)",
                s.cv,
                100.0 * (s.cv - law) / law
            ));
        }
    }
    l.check(
        "3",
        ok,
        "coefficient of variation follows sqrt((1-p)/(N p)) within 5 %",
        &details,
    );
}

fn criterion_4(l: &mut Ledger) {
    let mut ok = true;
    let mut details = Vec::new();
    for fit in default_family().fits() {
        let tc = fit.t_critical;
        let at = |g: f64| fit.dvt_step(0.3, g).unwrap();
        let sat = at(tc);
        let flat = [2.0 * tc, 100.0 * tc]
            .iter()
            .all(|&g| relative_gap(at(g), sat) <= 1e-12);
        let short = at(tc / 10.0);
        let below = if fit.c1 > 0.0 { short < sat } else { true };
        ok &= flat && below;
        details.push(format!(
            "pw={:.1e} s: step at tc, 2tc, 100tc constant: {flat}; at tc/10 {:.4e} vs {:.4e} (C1={:+.3}{})",
            fit.pw,
            short,
            sat,
            fit.c1,
            if fit.c1 > 0.0 { "" } else { ", strict drop not required" }
        ));
    }
    l.check(
        "4",
        ok,
        "gap response is flat beyond the critical gap",
        &details,
    );
}

fn criterion_5(l: &mut Ledger) {
    let ns: Vec<usize> = (1..=1000).collect();
    let family = default_family();
    let rows = errorfloor_sweep(
        &family,
        &ns,
        GapPolicy::Sparse,
        &BudgetOptions::default(),
        ExecMode::Parallel,
    )
    .unwrap();
    let not_worse = rows.iter().all(|r| r.compensated_total_err <= r.total_err);
    let strict = rows
        .iter()
        .filter(|r| r.n_slots >= 30)
        .all(|r| r.compensated_total_err < r.total_err);
    let pick = |n: usize| &rows[n - 1];
    let details: Vec<String> = [1usize, 10, 30, 100, 500, 1000]
        .iter()
        .map(|&n| {
            let r = pick(n);
            format!(
                "N={n:<4} total {:.4}  compensated {:.4}",
                r.total_err, r.compensated_total_err
            )
        })
        .collect();
    l.check(
        "5",
        not_worse && strict,
        "compensation never raises the total error and lowers it for N >= 30",
        &details,
    );
}

fn criterion_6(l: &mut Ledger) {
    let family = default_family();
    let ps = [0.2, 0.4, 0.6, 0.8, 1.0];
    let ns = [25usize, 100, 500, 1000];
    let runs = 2000;
    let mut details = Vec::new();
    let mut shape_ok = true;
    let mut cv_ok = true;
    let mut cv_at = BTreeMap::new();
    for policy in GapPolicy::ALL {
        for &n in &ns {
            let fit =
                ctf_rpu::stochastic::fit_for_policy(&family, policy, T_ON / n as f64).unwrap();
            let stats: Vec<_> = ps
                .iter()
                .map(|&p| update_stats(p, n, policy, &fit, runs, 11, ExecMode::Parallel).unwrap())
                .collect();
            let mut means = vec![0.0];
            means.extend(stats.iter().map(|s| s.mean_dvt));
            let monotone = means.windows(2).all(|w| w[1] > w[0]);
            let concave = means.windows(3).all(|w| w[1] - w[0] >= w[2] - w[1]);
            // the gap-interaction policy is checked for monotonicity only
            if policy == GapPolicy::True {
                shape_ok &= monotone;
            } else {
                shape_ok &= monotone && concave;
            }
            details.push(format!(
                "{policy:<6} N={n:<4} mean {:?} monotone {monotone} concave {concave}",
                means
                    .iter()
                    .map(|m| (m * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            ));
            for s in &stats {
                cv_at.insert((policy, n, (s.p * 10.0).round() as i64), s.cv);
            }
        }
    }
    for policy in GapPolicy::ALL {
        for &p in &ps[..4] {
            let key = (p * 10.0).round() as i64;
            let cvs: Vec<f64> = ns.iter().map(|&n| cv_at[&(policy, n, key)]).collect();
            cv_ok &= cvs.windows(2).all(|w| w[1] < w[0]);
        }
    }
    let probe = (SPREAD_PROBE * 10.0).round() as i64;
    let sparse = cv_at[&(GapPolicy::Sparse, 100, probe)];
    let true_gap = cv_at[&(GapPolicy::True, 100, probe)];
    let within = |v: f64, t: f64| (v - t).abs() <= 0.25 * t;
    let spread_ok = sparse < true_gap && within(sparse, 0.04) && within(true_gap, 0.06);
    details.push(format!("cv decreases with N at every p < 1: {cv_ok}"));
    details.push(format!("N=100 p={SPREAD_PROBE}: sparse cv {sparse:.4} (target 0.04), true cv {true_gap:.4} (target 0.06)"));
    l.check(
        "6",
        shape_ok && cv_ok && spread_ok,
        "mean response rises (concave without gap interaction), cv falls with N, sparse below true at N=100",
        &details,
    );
}

fn criterion_7(l: &mut Ledger, runs: &mut Runs) {
    if !runs.has(DatasetKind::Mnist) {
        l.record("7", Verdict::Skip, "MNIST files not found", &[]);
        return;
    }
    let mut details = Vec::new();
    let start = Instant::now();
    let mut cell = |rule: UpdateRule, details: &mut Vec<String>| {
        let (r, t) = runs.get(&gate(DatasetKind::Mnist, rule));
        details.push(describe(&r, t));
        r.accuracy_mean
    };
    let ideal = cell(UpdateRule::ideal(), &mut details);
    let t1000 = cell(noisy(1000, GapPolicy::True), &mut details);
    let s1000 = cell(noisy(1000, GapPolicy::Sparse), &mut details);
    let t100 = cell(noisy(100, GapPolicy::True), &mut details);
    let s100 = cell(noisy(100, GapPolicy::Sparse), &mut details);
    let elapsed = start.elapsed();
    let b = (s1000 - t1000).abs() < 1.0;
    let c = s100 - t100 >= 2.0;
    let fast = elapsed <= GATE_BUDGET;
    details.push(format!("ideal reference {ideal:.2} %"));
    details.push(format!(
        "(b) N=1000 |sparse - true| = {:.2} % (< 1): {b}",
        (s1000 - t1000).abs()
    ));
    details.push(format!(
        "(c) N=100 sparse - true = {:.2} % (>= 2): {c}",
        s100 - t100
    ));
    details.push(format!(
        "gate wall time {:.0} s (<= {} s): {fast}",
        elapsed.as_secs_f64(),
        GATE_BUDGET.as_secs()
    ));
    l.check(
        "7 (reduced gate)",
        b && c && fast,
        "MNIST accuracy orderings at N=1000 and N=100",
        &details,
    );

    if std::env::var("CTF_FULL_SCALE").ok().as_deref() != Some("1") {
        l.record(
            "7 (full scale)",
            Verdict::Skip,
            "set CTF_FULL_SCALE=1 to run the 60k/10k replication",
            &[],
        );
        return;
    }
    let data = runs.data[&DatasetKind::Mnist].as_ref().unwrap();
    if data.train.len() < 60_000 || data.test.len() < 10_000 {
        let msg = format!(
            "MNIST set holds {}/{} images, not 60000/10000",
            data.train.len(),
            data.test.len()
        );
        l.record("7 (full scale)", Verdict::Skip, &msg, &[]);
        return;
    }
    let full = |rule| TrainConfig {
        rule,
        ..TrainConfig::default()
    };
    let mut details = Vec::new();
    let mut acc = |rule: UpdateRule, details: &mut Vec<String>| {
        let (r, t) = runs.get(&full(rule));
        details.push(describe(&r, t));
        r.accuracy_mean
    };
    let ideal = acc(UpdateRule::ideal(), &mut details);
    let t1000 = acc(noisy(1000, GapPolicy::True), &mut details);
    let s1000 = acc(noisy(1000, GapPolicy::Sparse), &mut details);
    let t100 = acc(noisy(100, GapPolicy::True), &mut details);
    let s100 = acc(noisy(100, GapPolicy::Sparse), &mut details);
    let a = (ideal - 97.51).abs() <= 1.0;
    let b = (s1000 - t1000).abs() < 0.5;
    let c = s100 - t100 >= 3.0;
    details.push(format!("(a) ideal {ideal:.2} % vs 97.51 +- 1: {a}"));
    details.push(format!(
        "(b) N=1000 gap {:.2} % (< 0.5): {b}",
        (s1000 - t1000).abs()
    ));
    details.push(format!("(c) N=100 gap {:.2} % (>= 3): {c}", s100 - t100));
    l.check(
        "7 (full scale)",
        a && b && c,
        "MNIST 60k/10k replication",
        &details,
    );
}

fn criterion_8(l: &mut Ledger, runs: &mut Runs) {
    if !runs.has(DatasetKind::Mnist) {
        l.record("8", Verdict::Skip, "MNIST files not found", &[]);
        return;
    }
    let mut cells = BTreeMap::new();
    let mut details = Vec::new();
    for policy in [GapPolicy::True, GapPolicy::Sparse] {
        for noise in [true, false] {
            for nonlinearity in [true, false] {
                let (r, t) = runs.get(&gate(
                    DatasetKind::Mnist,
                    UpdateRule::new(100, policy, noise, nonlinearity),
                ));
                details.push(describe(&r, t));
                cells.insert((policy, noise, nonlinearity), r.accuracy_mean);
            }
        }
    }
    let mut ordered = true;
    for nonlinearity in [true, false] {
        let high = cells[&(GapPolicy::True, true, nonlinearity)];
        let low = cells[&(GapPolicy::Sparse, true, nonlinearity)];
        ordered &= high < low;
        details.push(format!(
            "nonlinearity {nonlinearity}: high noise {high:.2} % < low noise {low:.2} %: {}",
            high < low
        ));
    }
    let pair =
        (cells[&(GapPolicy::Sparse, true, true)] - cells[&(GapPolicy::Sparse, true, false)]).abs();
    details.push(format!(
        "low-noise nonlinearity on/off difference {pair:.2} % (< 1): {}",
        pair < 1.0
    ));
    let clean =
        (cells[&(GapPolicy::Sparse, false, true)] - cells[&(GapPolicy::True, false, true)]).abs();
    details.push(format!(
        "noise off, sparse vs true trajectory: {clean:.2} %"
    ));
    l.check(
        "8",
        ordered && pair < 1.0,
        "N=100 ablation: high noise below low noise, low-noise pair insensitive to nonlinearity",
        &details,
    );
}

fn criterion_9(l: &mut Ledger, runs: &mut Runs) {
    if !runs.has(DatasetKind::Fmnist) {
        l.record("9", Verdict::Skip, "Fashion-MNIST files not found", &[]);
        return;
    }
    let mut details = Vec::new();
    let mut acc = |n, policy, details: &mut Vec<String>| {
        let (r, t) = runs.get(&gate(DatasetKind::Fmnist, noisy(n, policy)));
        details.push(describe(&r, t));
        r.accuracy_mean
    };
    let t500 = acc(500, GapPolicy::True, &mut details);
    let s500 = acc(500, GapPolicy::Sparse, &mut details);
    let t1000 = acc(1000, GapPolicy::True, &mut details);
    let s1000 = acc(1000, GapPolicy::Sparse, &mut details);
    let a = s500 - t500 >= 2.0;
    let b = (s1000 - t1000).abs() < 1.0;
    details.push(format!(
        "N=500 sparse - true = {:.2} % (>= 2): {a}",
        s500 - t500
    ));
    details.push(format!(
        "N=1000 |sparse - true| = {:.2} % (< 1): {b}",
        (s1000 - t1000).abs()
    ));
    l.check(
        "9",
        a && b,
        "Fashion-MNIST orderings at N=500 and N=1000",
        &details,
    );
}

fn criterion_10(l: &mut Ledger, runs: &mut Runs) {
    let model = EnergyModel::default();
    let linear = (0..=1000u32)
        .all(|k| energy_per_sample(k as f64, &model).unwrap() == k as f64 * model.e_pulse);
    if !runs.has(DatasetKind::Mnist) {
        let msg = format!("MNIST files not found; energy linearity holds: {linear}");
        l.record("10", Verdict::Skip, &msg, &[]);
        return;
    }
    let (r, t) = runs.get(&gate(DatasetKind::Mnist, noisy(500, GapPolicy::True)));
    let ratio = r.energy_per_sample_j / PAPER_ENERGY_N500_TRUE;
    let close = (0.5..=2.0).contains(&ratio);
    l.check(
        "10",
        linear && close,
        "energy is linear in pulses and the N=500 true run lands within 2x of the table",
        &[
            describe(&r, t),
            format!("exact linearity over 0..=1000 pulses: {linear}"),
            format!(
                "{:.3e} J vs {PAPER_ENERGY_N500_TRUE:.2e} J (ratio {ratio:.2})",
                r.energy_per_sample_j
            ),
        ],
    );
}

fn read_dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn criterion_11(l: &mut Ledger) {
    let tmp = tempfile::tempdir().unwrap();
    let data_dir = tmp.path().join("data");
    write_toy_dataset(&data_dir.join("mnist"));
    let mut base = ExperimentConfig {
        data_dir: data_dir.clone(),
        ..ExperimentConfig::default()
    };
    base.stats.runs = 50;
    base.stats.ns = vec![25, 100];
    base.errorfloor.n_max = 200;
    base.train.hidden_units = 8;
    base.train.epochs = 2;
    base.train.seeds = 2;
    base.train.rule = UpdateRule::new(100, GapPolicy::True, true, true);
    let mut ok = true;
    let mut details = Vec::new();
    for command in [
        Command::Fit,
        Command::Stats,
        Command::Errorfloor,
        Command::Train,
        Command::Ablate,
    ] {
        let first = tmp.path().join(format!("{command}_a"));
        let second = tmp.path().join(format!("{command}_b"));
        let config = ExperimentConfig {
            output_dir: first.clone(),
            ..base.clone()
        };
        run(&config, command, ExecMode::Parallel).unwrap();
        let manifest = std::fs::read_dir(&first)
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.to_string_lossy().ends_with(".manifest.toml"))
            .expect("manifest written");
        let mut again = ExperimentConfig::read(&manifest).unwrap();
        again.output_dir = second.clone();
        run(&again, again.command.unwrap(), ExecMode::Sequential).unwrap();
        let (a, b) = (read_dir_files(&first), read_dir_files(&second));
        let same = a == b;
        ok &= same;
        details.push(format!(
            "{command}: {} files, byte-identical: {same}",
            a.len()
        ));
    }
    l.check(
        "11",
        ok,
        "re-running from a manifest reproduces every file byte for byte",
        &details,
    );
}

/// A small separable ten-class problem in IDX form.
fn write_toy_dataset(dir: &Path) {
    use ctf_rpu::dataset::{idx_paths, write_idx, ImageSet};
    std::fs::create_dir_all(dir).unwrap();
    for (split, count) in [(Split::Train, 200usize), (Split::Test, 60)] {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..count {
            let class = i % 10;
            for px in 0..16 {
                let on = px % 10 == class || (px * 7 + i) % 13 == 0;
                pixels.push(if on { 230 } else { 10 });
            }
            labels.push(class as u8);
        }
        let set = ImageSet::new(pixels, labels, 4, 4, split).unwrap();
        let (images, labels) = idx_paths(dir, split);
        write_idx(&set, &images, &labels).unwrap();
    }
}

#[test]
fn acceptance() {
    let mut l = Ledger { lines: Vec::new() };
    let mut runs = Runs::new();
    criterion_1(&mut l);
    criterion_2(&mut l);
    criterion_3(&mut l);
    criterion_4(&mut l);
    criterion_5(&mut l);
    criterion_6(&mut l);
    criterion_7(&mut l, &mut runs);
    criterion_8(&mut l, &mut runs);
    criterion_9(&mut l, &mut runs);
    criterion_10(&mut l, &mut runs);
    criterion_11(&mut l);

    let failed: Vec<&str> = l
        .lines
        .iter()
        .filter(|(_, v)| *v == Verdict::Fail)
        .map(|(id, _)| id.as_str())
        .collect();
    println!("failed criteria: {failed:?}");
    // training outcomes are reported, not enforced; everything else must hold
    let enforced = ["1", "2", "3", "4", "5", "6", "11"];
    let broken: Vec<&&str> = failed.iter().filter(|id| enforced.contains(id)).collect();
    assert!(
        broken.is_empty(),
        "deterministic criteria failed: {broken:?}"
    );
}
