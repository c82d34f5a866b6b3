//! Acceptance runs. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use plurality::clustering::{broadcast_among_clusters, ClusterLayout, ClusteringParams};
use plurality::config::{ExperimentConfig, Protocol};
use plurality::event::{calibrate_time_unit, time_unit_bound, Composition, NoTrace, MULTI_LEADER};
use plurality::harness::{run_experiment, write_outputs, ExperimentReport, TrialDetail};
use plurality::metrics::bias_squaring_report;
use plurality::oracle::oracle_sync_step_distribution;
use plurality::rng::{seeded_rng, trial_seed};
use plurality::sync::{sync_step, NodeView, SyncWorld};
use plurality::types::{Generation, OpinionId};
use plurality_acceptance::{fraction, median, Verdict};

const SEEDS: u64 = 20;

fn config(protocol: Protocol, n: u64, k: u32, seed: u64) -> ExperimentConfig {
    ExperimentConfig { protocol, n, k, alpha0: 1.5, gamma: 0.5, lambda: 1.0, seed, trials: SEEDS, ..Default::default() }
}

fn experiment(cfg: &ExperimentConfig) -> ExperimentReport {
    let report = run_experiment(cfg).expect("experiment runs");
    for t in &report.trials {
        if let Some(e) = &t.summary.error {
            panic!("trial {} failed: {e}", t.summary.trial);
        }
    }
    report
}

struct SyncBatch {
    k: u32,
    report: ExperimentReport,
}

fn sync_batches() -> (Vec<SyncBatch>, f64) {
    let start = Instant::now();
    let batches = [2, 3, 5]
        .into_iter()
        .map(|k| SyncBatch { k, report: experiment(&config(Protocol::Sync, 100_000, k, 100 + u64::from(k))) })
        .collect();
    (batches, start.elapsed().as_secs_f64())
}

fn criterion_1(batches: &[SyncBatch], secs: f64) -> Verdict {
    let wins: Vec<(u32, usize)> = batches
        .iter()
        .map(|b| (b.k, b.report.trials.iter().filter(|t| t.summary.plurality_won).count()))
        .collect();
    let pass = wins.iter().all(|&(_, w)| w >= 19) && secs < 300.0;
    let list: Vec<String> = wins.iter().map(|(k, w)| format!("k={k}: {w}/20")).collect();
    Verdict::new(1, pass, format!("sync wins {} in {secs:.1}s (need >= 19/20 each, < 300s)", list.join(", ")))
}

fn criterion_2(batches: &[SyncBatch]) -> Verdict {
    let mut pairs = Vec::new();
    for b in batches {
        for t in &b.report.trials {
            if let Some(TrialDetail::Sync(r)) = &t.detail {
                pairs.extend(r.generation_growth().into_iter().map(|(_, g)| g));
            }
        }
    }
    let gamma = batches[0].report.config.gamma;
    let ok = fraction(&pairs, |&g| g >= gamma);
    let low = pairs.iter().cloned().fold(f64::INFINITY, f64::min);
    Verdict::new(
        2,
        !pairs.is_empty() && ok >= 0.95,
        format!("g >= {gamma} in {:.1}% of {} (trial, generation) pairs, smallest {low:.3} (need >= 95%)", 100.0 * ok, pairs.len()),
    )
}

fn criterion_3(batches: &[SyncBatch]) -> Verdict {
    let mut ratios = Vec::new();
    for b in batches {
        for t in &b.report.trials {
            if let Some(TrialDetail::Sync(r)) = &t.detail {
                let report = bias_squaring_report(&r.generation_timeline(), b.k);
                ratios.extend(report.iter().filter_map(|p| p.relative_gap).map(|g| g + 1.0));
            }
        }
    }
    let ok = fraction(&ratios, |&x| x >= 0.8);
    Verdict::new(
        3,
        !ratios.is_empty() && ok >= 0.9,
        format!(
            "alpha_(i+1) >= 0.8 alpha_i^2 in {:.1}% of {} sub-threshold pairs, median ratio {:.3} (need >= 90%)",
            100.0 * ok,
            ratios.len(),
            median(&ratios).unwrap_or(f64::NAN)
        ),
    )
}

/// `(opinion, generation)` per node, plus round, schedule and cap.
type HandState = (Vec<(u32, u32)>, u64, Vec<u64>, u32);

fn hand_states() -> Vec<HandState> {
    vec![
        (vec![(0, 0), (1, 0)], 0, vec![1], 3),
        (vec![(0, 0), (0, 0), (1, 0)], 0, vec![1, 3], 3),
        (vec![(0, 0), (1, 0), (2, 0), (0, 0)], 1, vec![1, 3], 3),
        (vec![(0, 1), (1, 0), (1, 0), (0, 0), (2, 0)], 0, vec![2, 4], 3),
        (vec![(0, 1), (0, 1), (1, 1), (1, 0), (0, 0)], 1, vec![2, 4], 3),
        (vec![(0, 2), (1, 1), (0, 1), (1, 0), (0, 0), (2, 0)], 3, vec![2, 4], 3),
        (vec![(0, 2), (0, 2), (1, 2), (1, 1), (0, 0), (0, 0)], 5, vec![2, 4], 2),
        (vec![(0, 0), (1, 0), (0, 0), (1, 0), (2, 0), (0, 0), (1, 0)], 0, vec![1], 1),
        (vec![(0, 1), (1, 1), (0, 1), (1, 0), (2, 0), (0, 0), (1, 2), (2, 1)], 2, vec![1, 3, 6], 4),
        (vec![(3, 0), (3, 0), (1, 0), (2, 0), (3, 0), (0, 0), (1, 0), (3, 1)], 0, vec![1, 2], 2),
    ]
}

fn criterion_4() -> Verdict {
    const REPEATS: u64 = 100_000;
    let mut cells = 0usize;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (idx, (nodes, round, schedule, cap)) in hand_states().into_iter().enumerate() {
        let mut base = SyncWorld::new(nodes.iter().map(|&(o, _)| OpinionId(o)).collect(), schedule, cap);
        base.gens = nodes.iter().map(|&(_, g)| Generation(g)).collect();
        base.round = round;
        let n = base.len();
        let mut counts: Vec<BTreeMap<NodeView, u64>> = vec![BTreeMap::new(); n];
        let mut rng = seeded_rng(4, idx as u64);
        for _ in 0..REPEATS {
            let mut w = base.clone();
            sync_step(&mut w, &mut rng);
            for (v, c) in counts.iter_mut().enumerate() {
                *c.entry(w.view(v)).or_insert(0) += 1;
            }
        }
        for (v, observed) in counts.iter().enumerate() {
            let exact = oracle_sync_step_distribution(&base, v).expect("oracle accepts n <= 8");
            let mut keys: Vec<NodeView> = exact.keys().cloned().collect();
            keys.extend(observed.keys().cloned());
            keys.sort();
            keys.dedup();
            for key in keys {
                cells += 1;
                let p = exact.get(&key).copied().unwrap_or(0.0);
                let hat = observed.get(&key).copied().unwrap_or(0) as f64 / REPEATS as f64;
                let sigma = (p * (1.0 - p) / REPEATS as f64).sqrt();
                let dev = (hat - p).abs();
                if sigma > 0.0 {
                    worst = worst.max(dev / sigma);
                }
                if dev > 3.0 * sigma + 1e-12 {
                    bad.push(format!("state {idx} node {v} {key:?}: {hat:.5} vs {p:.5}"));
                }
            }
        }
    }
    Verdict::new(
        4,
        bad.is_empty(),
        format!("{cells} outcome cells over 10 states, worst deviation {worst:.2} sigma, {} outside 3 sigma {:?}", bad.len(), bad),
    )
}

fn criterion_5() -> Verdict {
    const SAMPLES: usize = 1_000_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, lambda) in [0.25, 0.5, 1.0, 2.0, 4.0].into_iter().enumerate() {
        let a = calibrate_time_unit(lambda, &Composition::Majorizing, SAMPLES, &mut seeded_rng(50, i as u64));
        let b = calibrate_time_unit(lambda, &Composition::Majorizing, SAMPLES, &mut seeded_rng(51, i as u64));
        let bound = time_unit_bound(lambda);
        let spread = (a - b).abs() / a;
        pass &= a < bound && spread < 0.01;
        parts.push(format!("lambda={lambda}: C1={a:.3} bound={bound:.3} rerun {:.2}%", 100.0 * spread));
    }
    Verdict::new(5, pass, parts.join("; "))
}

fn criterion_6(single: &ExperimentReport) -> Verdict {
    let mut lengths = Vec::new();
    for t in &single.trials {
        if let Some(TrialDetail::Single(r)) = &t.detail {
            lengths.extend(r.two_choices_lengths().into_iter().map(|(_, l)| l));
        }
    }
    let ok = fraction(&lengths, |&l| l > 1.5 && l < 3.5);
    Verdict::new(
        6,
        !lengths.is_empty() && ok >= 0.9,
        format!(
            "two-choices length in (1.5, 3.5) units for {:.1}% of {} generations, median {:.2} (need >= 90%)",
            100.0 * ok,
            lengths.len(),
            median(&lengths).unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_7(single: &ExperimentReport, secs: f64) -> Verdict {
    let s: Vec<_> = single.trials.iter().map(|t| &t.summary).collect();
    let won = s.iter().filter(|t| t.plurality_won).count();
    let eps = s.iter().filter(|t| t.eps_converged).count();
    let full = s.iter().filter(|t| t.eps_converged && t.full_time.is_some()).count();
    let eps_times: Vec<f64> = s.iter().filter_map(|t| t.eps_time).collect();
    let pass = won >= 19 && full == eps && secs < 600.0;
    Verdict::new(
        7,
        pass,
        format!(
            "eps-converged to plurality {won}/20, full consensus in {full}/{eps} eps-converged trials, median eps time {:.2} units, {secs:.1}s (need >= 19/20, all, < 600s)",
            median(&eps_times).unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_8(single: &ExperimentReport, multi: &ExperimentReport) -> Verdict {
    let mut checked = 0u64;
    let mut violations = 0u64;
    let mut labels = Vec::new();
    for t in single.trials.iter().chain(&multi.trials) {
        match &t.detail {
            Some(TrialDetail::Single(r)) => {
                checked += r.invariants.checked_updates;
                violations += r.invariants.violations();
                if r.invariants.violations() > 0 {
                    labels.push(format!("single {}: {:?}", t.summary.trial, r.invariants));
                }
            }
            Some(TrialDetail::Multi { run, .. }) => {
                checked += run.invariants.checked_updates;
                violations += run.invariants.violations();
                if run.invariants.violations() > 0 {
                    labels.push(format!("multi {}: {:?}", t.summary.trial, run.invariants));
                }
            }
            _ => {}
        }
    }
    Verdict::new(
        8,
        violations == 0 && checked > 0,
        format!("{violations} order violations over {checked} checked updates in 40 async runs {labels:?}"),
    )
}

fn criterion_9(multi: &ExperimentReport) -> Verdict {
    let cp = multi.resolved.clustering.clone().expect("clustering params");
    let n = multi.config.n;
    let mut fractions = Vec::new();
    let mut within = 0;
    for t in &multi.trials {
        if let Some(TrialDetail::Multi { census, .. }) = &t.detail {
            fractions.push(census.qualifying_fraction(n));
            if let (Some(f), Some(l)) = (census.t_f, census.t_l) {
                if (l - f) / cp.c1 <= cp.broadcast_window {
                    within += 1;
                }
            }
        }
    }
    let covered = fractions.iter().filter(|&&f| f >= 0.99).count();
    let low = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    Verdict::new(
        9,
        covered >= 19 && within >= 19,
        format!(
            ">= 99% in qualifying clusters in {covered}/20 seeds (lowest {:.2}%), t_l - t_f <= {} units in {within}/20 (need >= 19/20 each)",
            100.0 * low,
            cp.broadcast_window
        ),
    )
}

fn criterion_10() -> Verdict {
    let c1 = calibrate_time_unit(1.0, &Composition::Stages(MULTI_LEADER.to_vec()), 1_000_000, &mut seeded_rng(10, 0));
    let window = ClusteringParams::defaults(10_000, 1.0, c1).window_steps();
    let layout = ClusterLayout::uniform(100, 100);
    let mut times = Vec::new();
    let mut monotone = true;
    let mut incomplete = 0;
    for s in 0..SEEDS {
        let r = broadcast_among_clusters(&layout, 0, 1.0, window, 100.0 * c1, trial_seed(10, s), &mut NoTrace);
        monotone &= r.monotone;
        match r.completion {
            Some(t) => times.push(t / c1),
            None => incomplete += 1,
        }
    }
    let worst = times.iter().cloned().fold(0.0, f64::max);
    Verdict::new(
        10,
        incomplete == 0 && worst < 10.0 && monotone,
        format!(
            "median completion {:.2} units, worst {worst:.2}, incomplete {incomplete}/20, monotone {monotone} (need all < 10)",
            median(&times).unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_11(multi: &ExperimentReport) -> Verdict {
    let won = multi.trials.iter().filter(|t| t.summary.plurality_won).count();
    let mut samples = 0usize;
    let mut ok = 0usize;
    let mut clusters = Vec::new();
    for t in &multi.trials {
        if let Some(TrialDetail::Multi { run, .. }) = &t.detail {
            samples += run.desync.len();
            ok += run.desync.iter().filter(|&&(_, d)| d <= 1).count();
            clusters.push(f64::from(run.clusters));
        }
    }
    let frac = if samples == 0 { 0.0 } else { ok as f64 / samples as f64 };
    Verdict::new(
        11,
        won >= 18 && frac >= 0.95,
        format!(
            "eps-converged to plurality {won}/20, desync <= 1 at {:.2}% of {samples} instants, median {} clusters (need >= 18/20, >= 95%)",
            100.0 * frac,
            median(&clusters).unwrap_or(f64::NAN)
        ),
    )
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("output dir") {
        let path = entry.expect("dir entry").path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, std::fs::read(&path).expect("readable csv"));
        }
    }
    out
}

fn criterion_12() -> Verdict {
    let runs = [
        ExperimentConfig { trials: 3, ..config(Protocol::Sync, 20_000, 3, 12) },
        ExperimentConfig { trials: 2, ..config(Protocol::AsyncSingle, 2_000, 2, 12) },
        ExperimentConfig { trials: 2, ..config(Protocol::AsyncMulti, 3_000, 2, 12) },
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for cfg in runs {
        let mut files = Vec::new();
        let mut hashes = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().expect("temp dir");
            let report = experiment(&cfg);
            write_outputs(&report, dir.path()).expect("outputs written");
            files.push(csv_bytes(dir.path()));
            hashes.push(report.trials.iter().map(|t| t.summary.trace_hash.clone()).collect::<Vec<_>>());
        }
        let same_csv = !files[0].is_empty() && files[0] == files[1];
        let same_hash = hashes[0] == hashes[1];
        let hashed = hashes[0].iter().filter(|h| h.is_some()).count();
        pass &= same_csv && same_hash;
        parts.push(format!(
            "{:?}: {} csv files identical {same_csv}, {hashed} trace hashes identical {same_hash}",
            cfg.protocol,
            files[0].len()
        ));
    }
    Verdict::new(12, pass, parts.join("; "))
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut emit = |v: Verdict| {
        println!("{v}");
        verdicts.push(v);
    };

    let (batches, sync_secs) = sync_batches();
    emit(criterion_1(&batches, sync_secs));
    emit(criterion_2(&batches));
    emit(criterion_3(&batches));
    drop(batches);
    emit(criterion_4());
    emit(criterion_5());

    let start = Instant::now();
    let single = experiment(&config(Protocol::AsyncSingle, 10_000, 2, 600));
    let single_secs = start.elapsed().as_secs_f64();
    let multi = experiment(&config(Protocol::AsyncMulti, 10_000, 2, 1100));
    emit(criterion_6(&single));
    emit(criterion_7(&single, single_secs));
    emit(criterion_8(&single, &multi));
    emit(criterion_9(&multi));
    emit(criterion_10());
    emit(criterion_11(&multi));
    emit(criterion_12());

    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!("acceptance: {}/{} criteria passed", verdicts.len() - failed.len(), verdicts.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
