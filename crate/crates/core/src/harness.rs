//! Trial orchestration and output files.
//!
//! Per-config constants (time unit, broadcast constant, schedules) are
//! resolved once. Trials then run in parallel, each with its own seed derived
//! from the base seed and the trial index, and are written in trial order by
//! a single writer, so identical configs give identical bytes.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{calibrate_broadcast_constant, run_clustering, ClusterCensus, ClusteringParams};
use crate::config::{ExperimentConfig, Protocol};
use crate::error::Result;
use crate::event::{
    calibrate_time_unit, time_unit_bound, Composition, HashTrace, TextTrace, TraceSink, MULTI_LEADER,
    SINGLE_LEADER,
};
use crate::metrics::{bias_squaring_report, detect_convergence, BiasReport, Convergence, PopulationSnapshot};
use crate::multi_leader::{run_multi_leader, LeaderMove, MultiLeaderParams, MultiLeaderRunResult};
use crate::population::initial_counts;
use crate::rng::{seeded_rng, splitmix64, streams, trial_seed};
use crate::single_leader::{run_single_leader, AsyncRunResult, SingleLeaderParams};
use crate::sync::{run_sync, SyncParams, SyncRunResult};

pub const FORMAT_VERSION: u32 = 1;
pub const CALIBRATION_SAMPLES: usize = 1_000_000;
pub const BROADCAST_CALIBRATION_TRIALS: usize = 20;

/// Everything derived from the config before any trial runs.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub protocol: Protocol,
    pub epsilon: f64,
    pub gen_cap: u32,
    pub schedule: Option<Vec<u64>>,
    pub round_budget: Option<u64>,
    /// Time unit in time steps, from the protocol's channel composition.
    pub c1: Option<f64>,
    pub c1_majorizing: Option<f64>,
    pub time_unit_bound: Option<f64>,
    pub c_br: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub budget_steps: Option<f64>,
    pub prop_threshold: Option<u64>,
    pub size_threshold: Option<u64>,
    pub clustering: Option<ClusteringParams>,
    /// Member reports move a leader only if they carry a change or `i > 0`.
    pub member_ahead_gated: Option<bool>,
}

fn calibrate(config: &ExperimentConfig, stages: &[usize]) -> (f64, f64) {
    let mut rng = seeded_rng(config.seed, streams::CALIBRATION);
    let c1 = calibrate_time_unit(config.lambda, &Composition::Stages(stages.to_vec()), CALIBRATION_SAMPLES, &mut rng);
    let maj = calibrate_time_unit(config.lambda, &Composition::Majorizing, CALIBRATION_SAMPLES, &mut rng);
    (c1, maj)
}

pub fn resolve(config: &ExperimentConfig) -> Result<Resolved> {
    config.validate()?;
    let mut r = Resolved {
        protocol: config.protocol,
        epsilon: config.resolved_epsilon(),
        gen_cap: 0,
        schedule: None,
        round_budget: None,
        c1: None,
        c1_majorizing: None,
        time_unit_bound: None,
        c_br: None,
        c2: None,
        c3: None,
        budget_steps: None,
        prop_threshold: None,
        size_threshold: None,
        clustering: None,
        member_ahead_gated: None,
    };
    match config.protocol {
        Protocol::Sync => {
            let p = SyncParams::from_config(config)?;
            r.gen_cap = p.gen_cap;
            r.schedule = Some(p.schedule);
            r.round_budget = Some(p.budget);
        }
        Protocol::AsyncSingle => {
            let (c1, maj) = calibrate(config, &SINGLE_LEADER);
            let p = SingleLeaderParams::from_config(config, c1)?;
            r.gen_cap = p.gen_cap;
            r.c1 = Some(c1);
            r.c1_majorizing = Some(maj);
            r.time_unit_bound = Some(time_unit_bound(config.lambda));
            r.c3 = Some(p.c3());
            r.budget_steps = Some(p.budget);
            r.prop_threshold = Some(p.prop_threshold());
            r.size_threshold = Some(p.size_threshold());
        }
        Protocol::AsyncMulti => {
            let (c1, maj) = calibrate(config, &MULTI_LEADER);
            let cp = ClusteringParams::from_config(config, c1)?;
            let c_br = calibrate_broadcast_constant(
                config.n,
                cp.size_cap,
                config.lambda,
                c1,
                BROADCAST_CALIBRATION_TRIALS,
                splitmix64(config.seed ^ streams::CALIBRATION),
            );
            let p = MultiLeaderParams::from_config(config, c1, c_br)?;
            let (c2, c3) = p.phase_constants();
            r.gen_cap = p.gen_cap;
            r.c1 = Some(c1);
            r.c1_majorizing = Some(maj);
            r.time_unit_bound = Some(time_unit_bound(config.lambda));
            r.c_br = Some(c_br);
            r.c2 = Some(c2);
            r.c3 = Some(c3);
            r.budget_steps = Some(p.budget);
            r.clustering = Some(cp);
            r.member_ahead_gated = Some(true);
        }
    }
    Ok(r)
}

/// One row of `summary.csv`. Async times are in time units, sync times in rounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub seed: u64,
    pub plurality: Option<u32>,
    pub winner: Option<u32>,
    pub eps_converged: bool,
    pub plurality_won: bool,
    pub eps_time: Option<f64>,
    pub full_time: Option<f64>,
    pub end_time: Option<f64>,
    pub events: Option<u64>,
    pub clusters: Option<u32>,
    pub invariant_violations: Option<u64>,
    pub trace_hash: Option<String>,
    pub error: Option<String>,
}

impl TrialSummary {
    fn empty(trial: u64, seed: u64) -> Self {
        TrialSummary {
            trial,
            seed,
            plurality: None,
            winner: None,
            eps_converged: false,
            plurality_won: false,
            eps_time: None,
            full_time: None,
            end_time: None,
            events: None,
            clusters: None,
            invariant_violations: None,
            trace_hash: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrialDetail {
    Sync(SyncRunResult),
    Single(AsyncRunResult),
    Multi { census: ClusterCensus, run: MultiLeaderRunResult },
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub summary: TrialSummary,
    pub detail: Option<TrialDetail>,
    pub trace: Option<String>,
}

fn first_eps_round(snaps: &[PopulationSnapshot], eps: f64, plurality: crate::types::OpinionId) -> Option<f64> {
    snaps
        .iter()
        .find(|s| detect_convergence(&s.opinion_totals(), eps, plurality) != Convergence::None)
        .map(|s| s.time)
}

struct Traces {
    hash: HashTrace,
    text: Option<TextTrace>,
}

impl TraceSink for Traces {
    fn record(&mut self, time: f64, seq: u64, label: &str, node: crate::types::NodeId) {
        self.hash.record(time, seq, label, node);
        if let Some(t) = &mut self.text {
            t.record(time, seq, label, node);
        }
    }
}

fn run_detail(
    config: &ExperimentConfig,
    resolved: &Resolved,
    seed: u64,
    traces: &mut Traces,
) -> Result<(TrialSummary, TrialDetail)> {
    let blank = TrialSummary::empty(0, seed);
    match config.protocol {
        Protocol::Sync => {
            let p = SyncParams::from_config(config)?;
            let r = run_sync(&p, seed)?;
            let eps_time = first_eps_round(&r.snapshots, resolved.epsilon, r.plurality);
            let s = TrialSummary {
                plurality: Some(r.plurality.0),
                winner: r.winner.map(|w| w.0),
                eps_converged: eps_time.is_some(),
                plurality_won: r.plurality_won,
                eps_time,
                full_time: r.converged.then_some(r.rounds as f64),
                end_time: Some(r.rounds as f64),
                ..blank
            };
            Ok((s, TrialDetail::Sync(r)))
        }
        Protocol::AsyncSingle => {
            let c1 = resolved.c1.expect("calibrated");
            let p = SingleLeaderParams::from_config(config, c1)?;
            let r = run_single_leader(&p, seed, traces)?;
            let s = TrialSummary {
                plurality: Some(r.plurality.0),
                winner: r.winner.map(|w| w.0),
                eps_converged: r.eps_time.is_some(),
                plurality_won: r.eps_converged_to_plurality(),
                eps_time: r.eps_time.map(|t| t / c1),
                full_time: r.full_time.map(|t| t / c1),
                end_time: Some(r.end_time / c1),
                events: Some(r.events),
                invariant_violations: Some(r.invariants.violations()),
                ..blank
            };
            Ok((s, TrialDetail::Single(r)))
        }
        Protocol::AsyncMulti => {
            let c1 = resolved.c1.expect("calibrated");
            let cp = resolved.clustering.clone().expect("clustering params");
            let p = MultiLeaderParams::from_config(config, c1, resolved.c_br.expect("calibrated"))?;
            let cl = run_clustering(config.n, &cp, seed, traces)?;
            let r = run_multi_leader(&p, &cl.layout, seed, traces)?;
            let t0 = cl.census.t_f.unwrap_or(cl.census.end_time);
            let s = TrialSummary {
                plurality: Some(r.plurality.0),
                winner: r.winner.map(|w| w.0),
                eps_converged: r.eps_time.is_some(),
                plurality_won: r.eps_converged_to_plurality(),
                eps_time: r.eps_time.map(|t| (t0 + t) / c1),
                full_time: r.full_time.map(|t| (t0 + t) / c1),
                end_time: Some((t0 + r.end_time) / c1),
                events: Some(cl.events + r.events),
                clusters: Some(r.clusters),
                invariant_violations: Some(r.invariants.violations()),
                ..blank
            };
            Ok((s, TrialDetail::Multi { census: cl.census, run: r }))
        }
    }
}

/// Runs one trial. Failures are recorded, not propagated.
pub fn run_trial(config: &ExperimentConfig, resolved: &Resolved, trial: u64) -> TrialRecord {
    let seed = trial_seed(config.seed, trial);
    let mut traces = Traces { hash: HashTrace::new(), text: config.trace.then(TextTrace::default) };
    match run_detail(config, resolved, seed, &mut traces) {
        Ok((mut summary, detail)) => {
            summary.trial = trial;
            if traces.hash.count() > 0 {
                summary.trace_hash = Some(traces.hash.hex_digest());
            }
            TrialRecord { summary, detail: Some(detail), trace: traces.text.map(|t| t.text) }
        }
        Err(e) => TrialRecord {
            summary: TrialSummary { error: Some(e.to_string()), ..TrialSummary::empty(trial, seed) },
            detail: None,
            trace: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub trials: u64,
    pub failed: u64,
    /// Share of all trials won by the initial plurality.
    pub win_rate: Option<f64>,
    pub eps_rate: Option<f64>,
    pub median_eps_time: Option<f64>,
    pub median_full_time: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { (xs[m - 1] + xs[m]) / 2.0 })
}

pub fn aggregate(trials: &[TrialRecord]) -> Aggregate {
    let n = trials.len() as u64;
    let rate = |f: &dyn Fn(&TrialSummary) -> bool| {
        (n > 0).then(|| trials.iter().filter(|t| f(&t.summary)).count() as f64 / n as f64)
    };
    Aggregate {
        trials: n,
        failed: trials.iter().filter(|t| t.summary.error.is_some()).count() as u64,
        win_rate: rate(&|s| s.plurality_won),
        eps_rate: rate(&|s| s.eps_converged),
        median_eps_time: median(trials.iter().filter_map(|t| t.summary.eps_time).collect()),
        median_full_time: median(trials.iter().filter_map(|t| t.summary.full_time).collect()),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let resolved = resolve(config)?;
    let trials: Vec<TrialRecord> =
        (0..config.trials).into_par_iter().map(|t| run_trial(config, &resolved, t)).collect();
    let aggregate = aggregate(&trials);
    Ok(ExperimentReport { config: config.clone(), resolved, trials, aggregate })
}

const SUMMARY_COLUMNS: [&str; 14] = [
    "trial",
    "seed",
    "plurality",
    "winner",
    "eps_converged",
    "plurality_won",
    "eps_time",
    "full_time",
    "end_time",
    "events",
    "clusters",
    "invariant_violations",
    "trace_hash",
    "error",
];

const BIAS_COLUMNS: [&str; 9] = [
    "trial",
    "generation",
    "birth_time",
    "alpha_at_birth",
    "alpha_at_prop",
    "predicted_square",
    "relative_gap",
    "past_threshold",
    "dominant_growth_ok",
];

const CLUSTER_COLUMNS: [&str; 10] = [
    "trial",
    "clusters",
    "qualifying",
    "dormant",
    "forced_dormant",
    "unclustered",
    "in_qualifying",
    "t_f",
    "t_l",
    "end_time",
];

#[derive(Serialize)]
struct SnapshotRow {
    trial: u64,
    time: f64,
    generation: usize,
    opinion: usize,
    count: u64,
}

#[derive(Serialize)]
struct PhaseRow {
    trial: u64,
    cluster: Option<u32>,
    generation: u32,
    event: &'static str,
    time: f64,
    gen_size: Option<u64>,
    alpha: Option<f64>,
}

#[derive(Serialize)]
struct BiasRow {
    trial: u64,
    generation: u32,
    birth_time: f64,
    alpha_at_birth: f64,
    alpha_at_prop: f64,
    predicted_square: f64,
    relative_gap: Option<f64>,
    past_threshold: bool,
    dominant_growth_ok: Option<bool>,
}

impl BiasRow {
    fn new(trial: u64, r: BiasReport) -> Self {
        BiasRow {
            trial,
            generation: r.generation,
            birth_time: r.birth_time,
            alpha_at_birth: r.alpha_at_birth,
            alpha_at_prop: r.alpha_at_prop,
            predicted_square: r.predicted_square,
            relative_gap: r.relative_gap,
            past_threshold: r.past_threshold,
            dominant_growth_ok: r.dominant_growth_ok,
        }
    }
}

#[derive(Serialize)]
struct DesyncRow {
    trial: u64,
    time: f64,
    desync: u32,
}

#[derive(Serialize)]
struct ClusterRow {
    trial: u64,
    clusters: u32,
    qualifying: u32,
    dormant: u32,
    forced_dormant: u32,
    unclustered: u64,
    in_qualifying: u64,
    t_f: Option<f64>,
    t_l: Option<f64>,
    end_time: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    config: &'a ExperimentConfig,
    resolved: &'a Resolved,
    trials: Vec<&'a TrialSummary>,
    aggregate: &'a Aggregate,
}

fn state_name(state: u8) -> &'static str {
    match state {
        1 => "two_choices",
        2 => "sleeping",
        _ => "propagation",
    }
}

/// Writes `snapshots.csv`, `phases.csv`, `bias.csv`, `summary.csv`,
/// `desync.csv`, `clusters.csv` and `manifest.json` into `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let open = |name: &str, header: &[&str]| -> Result<csv::Writer<fs::File>> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(name))?;
        w.write_record(header)?;
        Ok(w)
    };
    let mut snaps = open("snapshots.csv", &["trial", "time", "generation", "opinion", "count"])?;
    let mut phases = open("phases.csv", &["trial", "cluster", "generation", "event", "time", "gen_size", "alpha"])?;
    let mut bias = open("bias.csv", &BIAS_COLUMNS)?;
    let mut summary = open("summary.csv", &SUMMARY_COLUMNS)?;
    let mut desync = open("desync.csv", &["trial", "time", "desync"])?;
    let mut clusters = open("clusters.csv", &CLUSTER_COLUMNS)?;
    let cfg = &report.config;
    let initial = initial_counts(cfg.n, cfg.k, cfg.alpha0)?;
    let scale = report.resolved.c1.unwrap_or(1.0);

    for rec in &report.trials {
        let trial = rec.summary.trial;
        summary.serialize(&rec.summary)?;
        let Some(detail) = &rec.detail else { continue };
        let (snapshots, timeline) = match detail {
            TrialDetail::Sync(r) => {
                for (i, &t) in r.schedule.iter().enumerate() {
                    if t <= r.rounds {
                        phases.serialize(PhaseRow {
                            trial,
                            cluster: None,
                            generation: i as u32 + 1,
                            event: "birth",
                            time: t as f64,
                            gen_size: None,
                            alpha: None,
                        })?;
                    }
                }
                (&r.snapshots, r.generation_timeline())
            }
            TrialDetail::Single(r) => {
                for ph in &r.phases {
                    let mut row = |event, time: f64, gen_size, alpha| {
                        phases.serialize(PhaseRow {
                            trial,
                            cluster: None,
                            generation: ph.generation,
                            event,
                            time: time / scale,
                            gen_size,
                            alpha,
                        })
                    };
                    row("birth", ph.birth_time, None, None)?;
                    if let Some(t) = ph.prop_time {
                        row("propagation", t, ph.size_at_prop, ph.alpha_at_prop)?;
                    }
                    if let Some(t) = ph.end_time {
                        row("end", t, None, ph.alpha_at_end)?;
                    }
                }
                (&r.snapshots, r.generation_timeline(&initial))
            }
            TrialDetail::Multi { census, run } => {
                for tr in &run.transitions {
                    let event = match tr.cause {
                        LeaderMove::NextGeneration => "birth",
                        _ => state_name(tr.state),
                    };
                    phases.serialize(PhaseRow {
                        trial,
                        cluster: Some(tr.cluster),
                        generation: tr.gen,
                        event,
                        time: tr.time / scale,
                        gen_size: Some(tr.gen_size),
                        alpha: None,
                    })?;
                }
                for &(time, d) in &run.desync {
                    desync.serialize(DesyncRow { trial, time: time / scale, desync: d })?;
                }
                clusters.serialize(ClusterRow {
                    trial,
                    clusters: census.clusters,
                    qualifying: census.qualifying,
                    dormant: census.dormant,
                    forced_dormant: census.forced_dormant,
                    unclustered: census.unclustered,
                    in_qualifying: census.in_qualifying,
                    t_f: census.t_f.map(|t| t / scale),
                    t_l: census.t_l.map(|t| t / scale),
                    end_time: census.end_time / scale,
                })?;
                (&run.snapshots, run.generation_timeline(&initial))
            }
        };
        for s in snapshots {
            for (g, row) in s.counts.iter().enumerate() {
                for (j, &count) in row.iter().enumerate() {
                    snaps.serialize(SnapshotRow { trial, time: s.time / scale, generation: g, opinion: j, count })?;
                }
            }
        }
        for report in bias_squaring_report(&timeline, cfg.k) {
            bias.serialize(BiasRow::new(trial, report))?;
        }
    }
    for w in [&mut snaps, &mut phases, &mut bias, &mut summary, &mut desync, &mut clusters] {
        w.flush()?;
    }
    drop((snaps, phases, bias, summary, desync, clusters));

    for rec in &report.trials {
        if let Some(text) = &rec.trace {
            fs::write(dir.join(format!("trace_{}.txt", rec.summary.trial)), text)?;
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: &report.config,
        resolved: &report.resolved,
        trials: report.trials.iter().map(|t| &t.summary).collect(),
        aggregate: &report.aggregate,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}
