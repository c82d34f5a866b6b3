//! Asynchronous protocol coordinated by one leader.
//!
//! Nodes tick on independent Poisson(1) clocks. Every tick sends a 0-signal to
//! the leader; an unlocked node additionally locks itself, opens channels to
//! two random nodes and then to the leader, and once the channels are up runs
//! one step of the generation protocol against the leader's public
//! `(gen, prop)` pair. The leader counts 0-signals to measure elapsed time and
//! counts generation reports to decide when the next generation may start.

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::event::{
    open_channels, run_until, schedule_tick, send_signal, Event, LatencyModel, Process, RunOutcome,
    Scheduled, Scheduler, StopReason, TraceSink, SINGLE_LEADER,
};
use crate::metrics::{async_timeline, derive_stats, GenerationPoint, GenerationStats, PopulationSnapshot};
use crate::params::single_leader_gen_cap;
use crate::population::{assign_initial_opinions, initial_counts, plurality};
use crate::rng::{seeded_rng, streams, SimRng};
use crate::types::{NodeId, OpinionId};

/// The node that also hosts the leader's memory.
pub const LEADER: NodeId = 0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleLeaderParams {
    pub n: u64,
    pub k: u32,
    pub alpha0: f64,
    pub lambda: f64,
    /// Time unit in time steps.
    pub c1: f64,
    pub gen_cap: u32,
    pub epsilon: f64,
    /// Simulated-time budget in time steps.
    pub budget: f64,
    /// Snapshot spacing in time steps; `None` records only phase transitions.
    pub snapshot_interval: Option<f64>,
}

impl SingleLeaderParams {
    pub fn from_config(config: &ExperimentConfig, c1: f64) -> Result<Self> {
        config.validate()?;
        let gen_cap = match config.generation_cap {
            Some(g) => g,
            None if config.k == 1 => 1,
            None => single_leader_gen_cap(config.n, config.alpha0, config.k)?,
        };
        Ok(SingleLeaderParams {
            n: config.n,
            k: config.k,
            alpha0: config.alpha0,
            lambda: config.lambda,
            c1,
            gen_cap,
            epsilon: config.resolved_epsilon(),
            budget: config.budget.unwrap_or(DEFAULT_BUDGET_UNITS) * c1,
            snapshot_interval: Some(config.snapshot_interval),
        })
    }

    /// `C3 = C1 (2 + log n / sqrt n)`.
    pub fn c3(&self) -> f64 {
        let n = self.n as f64;
        self.c1 * (2.0 + n.log2() / n.sqrt())
    }

    /// 0-signals the leader counts before allowing propagation.
    pub fn prop_threshold(&self) -> u64 {
        (self.c3() * self.n as f64).ceil() as u64
    }

    /// Generation reports needed before the next generation starts.
    pub fn size_threshold(&self) -> u64 {
        self.n.div_ceil(2)
    }
}

/// Default budget of the asynchronous engines, in time units.
pub const DEFAULT_BUDGET_UNITS: f64 = 200.0;

/// The leader's memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SingleLeaderState {
    pub gen: u32,
    pub prop: bool,
    pub t: u64,
    pub gen_size: u64,
    pub prop_threshold: u64,
    pub size_threshold: u64,
    pub gen_cap: u32,
}

/// What a signal did to the leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderChange {
    None,
    PropOn,
    NextGeneration,
}

impl SingleLeaderState {
    pub fn new(prop_threshold: u64, size_threshold: u64, gen_cap: u32) -> Self {
        SingleLeaderState { gen: 1, prop: false, t: 0, gen_size: 0, prop_threshold, size_threshold, gen_cap }
    }

    pub fn view(&self) -> (u32, bool) {
        (self.gen, self.prop)
    }

    /// Handles an `i`-signal.
    ///
    /// The next generation starts only once propagation has been allowed for
    /// the current one, so every generation gets a propagation phase.
    pub fn on_signal(&mut self, i: u32) -> LeaderChange {
        let mut change = LeaderChange::None;
        if i == 0 {
            self.t += 1;
            if self.t == self.prop_threshold && !self.prop {
                self.prop = true;
                change = LeaderChange::PropOn;
            }
        }
        if i == self.gen {
            self.gen_size += 1;
            if self.prop && self.gen_size >= self.size_threshold && self.gen < self.gen_cap {
                self.gen += 1;
                self.t = 0;
                self.prop = false;
                self.gen_size = 0;
                change = LeaderChange::NextGeneration;
            }
        }
        change
    }
}

/// Node-side sample of another node, read when channels are up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub opinion: OpinionId,
    pub gen: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Cached leader view was stale; only the cache changed.
    Refresh,
    TwoChoices,
    Propagation,
    Idle,
}

/// One node step. Returns the node's new `(opinion, gen)` and what happened.
pub fn node_step(
    own: Sample,
    cached: (u32, bool),
    leader: (u32, bool),
    a: Sample,
    b: Sample,
) -> (Sample, StepKind) {
    if cached != leader {
        return (own, StepKind::Refresh);
    }
    let (lgen, prop) = leader;
    if a.gen + 1 == lgen && b.gen + 1 == lgen && a.opinion == b.opinion && !prop {
        return (Sample { opinion: a.opinion, gen: lgen }, StepKind::TwoChoices);
    }
    let eligible = |s: Sample| own.gen < s.gen && (s.gen < lgen || prop);
    let pick = match (eligible(a), eligible(b)) {
        (true, true) => Some(if b.gen > a.gen { b } else { a }),
        (true, false) => Some(a),
        (false, true) => Some(b),
        (false, false) => None,
    };
    match pick {
        Some(s) => (s, StepKind::Propagation),
        None => (own, StepKind::Idle),
    }
}

/// One generation as seen by the leader.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub generation: u32,
    /// Leader switched to this generation (0 for the first one).
    pub birth_time: f64,
    /// First node promoted into the generation.
    pub first_promotion: Option<f64>,
    pub prop_time: Option<f64>,
    /// `gen_size` when propagation was allowed.
    pub size_at_prop: Option<u64>,
    /// Bias inside the generation when propagation was allowed.
    pub alpha_at_prop: Option<f64>,
    /// Largest opinion fraction inside the generation at the same instant.
    pub dominant_at_prop: Option<f64>,
    /// Bias inside the generation when the leader moved on.
    pub alpha_at_end: Option<f64>,
    pub end_time: Option<f64>,
}

/// Counts of protocol-order violations observed during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub checked_updates: u64,
    pub gen_decrease: u64,
    pub above_leader: u64,
    pub early_propagation: u64,
    pub late_two_choices: u64,
    pub mono_broken: u64,
    /// Generations found monochromatic when the leader moved past them.
    pub mono_locks: u32,
}

impl InvariantReport {
    pub fn violations(&self) -> u64 {
        self.gen_decrease + self.above_leader + self.early_propagation + self.late_two_choices + self.mono_broken
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AsyncRunResult {
    pub plurality: OpinionId,
    pub winner: Option<OpinionId>,
    pub eps_time: Option<f64>,
    pub full_time: Option<f64>,
    pub end_time: f64,
    pub events: u64,
    pub stop: StopReason,
    pub c1: f64,
    pub gen_cap: u32,
    pub phases: Vec<PhaseRecord>,
    pub invariants: InvariantReport,
    #[serde(skip)]
    pub snapshots: Vec<PopulationSnapshot>,
}

impl AsyncRunResult {
    pub fn eps_converged_to_plurality(&self) -> bool {
        self.eps_time.is_some() && self.winner == Some(self.plurality)
    }

    /// Per-generation bias with the end of each two-choices phase standing in
    /// for the birth instant. Generation 0 comes from `initial` counts.
    pub fn generation_timeline(&self, initial: &[u64]) -> Vec<GenerationPoint> {
        let marks = self.phases.iter().filter_map(|p| {
            Some((p.generation, p.prop_time? / self.c1, p.alpha_at_prop?, p.dominant_at_prop?))
        });
        async_timeline(initial, marks)
    }

    /// Two-choices phase length of each generation that reached propagation,
    /// in time units.
    pub fn two_choices_lengths(&self) -> Vec<(u32, f64)> {
        self.phases
            .iter()
            .filter_map(|p| p.prop_time.map(|t| (p.generation, (t - p.birth_time) / self.c1)))
            .collect()
    }
}

type Ev = Event<(NodeId, NodeId), u32>;

struct World {
    params: SingleLeaderParams,
    latency: LatencyModel,
    rng: SimRng,
    opinions: Vec<OpinionId>,
    gens: Vec<u32>,
    locked: Vec<bool>,
    cached: Vec<(u32, bool)>,
    leader: SingleLeaderState,
    counts: Vec<Vec<u64>>,
    opinion_totals: Vec<u64>,
    prop_first: Vec<Option<f64>>,
    /// `mono[g] = Some(c)`: from now on every node entering gen >= g has color c.
    mono: Vec<Option<OpinionId>>,
    phases: Vec<PhaseRecord>,
    inv: InvariantReport,
    snapshots: Vec<PopulationSnapshot>,
    next_snapshot: f64,
    eps_need: f64,
    eps_time: Option<f64>,
    winner: Option<OpinionId>,
    full_time: Option<f64>,
}

impl World {
    fn snapshot(&self, time: f64) -> PopulationSnapshot {
        PopulationSnapshot { time, k: self.params.k, counts: self.counts.clone() }
    }

    fn stats_of(&self, g: u32) -> Option<GenerationStats> {
        let s = self.snapshot(0.0);
        derive_stats(&s).get(g as usize).cloned().flatten()
    }

    fn catch_up_snapshots(&mut self, now: f64) {
        let Some(dt) = self.params.snapshot_interval else { return };
        while self.next_snapshot <= now {
            let s = self.snapshot(self.next_snapshot);
            self.snapshots.push(s);
            self.next_snapshot += dt;
        }
    }

    fn set_node(&mut self, v: usize, to: Sample, kind: StepKind, now: f64) {
        let from = Sample { opinion: self.opinions[v], gen: self.gens[v] };
        if from == to {
            return;
        }
        self.inv.checked_updates += 1;
        if to.gen < from.gen {
            self.inv.gen_decrease += 1;
        }
        if to.gen > self.leader.gen {
            self.inv.above_leader += 1;
        }
        if to.gen > from.gen {
            match kind {
                StepKind::Propagation => {
                    if self.prop_first[to.gen as usize].is_none_or(|t| t > now) {
                        self.inv.early_propagation += 1;
                    }
                }
                StepKind::TwoChoices if self.leader.gen != to.gen || self.leader.prop => {
                    self.inv.late_two_choices += 1;
                }
                _ => {}
            }
        }
        for g in 0..=to.gen as usize {
            if let Some(c) = self.mono[g] {
                if c != to.opinion {
                    self.inv.mono_broken += 1;
                    break;
                }
            }
        }
        if to.gen > from.gen && to.gen > 0 {
            if let Some(ph) = self.phases.get_mut(to.gen as usize - 1) {
                ph.first_promotion.get_or_insert(now);
            }
        }
        self.counts[from.gen as usize][from.opinion.index()] -= 1;
        self.counts[to.gen as usize][to.opinion.index()] += 1;
        self.opinion_totals[from.opinion.index()] -= 1;
        self.opinion_totals[to.opinion.index()] += 1;
        self.opinions[v] = to.opinion;
        self.gens[v] = to.gen;
        self.check_convergence(now);
    }

    fn check_convergence(&mut self, now: f64) {
        if self.eps_time.is_none() {
            let reached = self.opinion_totals.iter().position(|&c| c as f64 >= self.eps_need && c > 0);
            if let Some(j) = reached {
                self.eps_time = Some(now);
                self.winner = Some(OpinionId(j as u32));
            }
        }
        if self.full_time.is_none() && self.opinion_totals.contains(&self.params.n) {
            self.full_time = Some(now);
        }
    }

    fn on_leader_change(&mut self, change: LeaderChange, now: f64) {
        match change {
            LeaderChange::None => {}
            LeaderChange::PropOn => {
                let g = self.leader.gen;
                self.prop_first[g as usize].get_or_insert(now);
                let stats = self.stats_of(g);
                let ph = self.phases.last_mut().expect("phase");
                debug_assert_eq!(ph.generation, g);
                ph.prop_time = Some(now);
                ph.size_at_prop = Some(self.leader.gen_size);
                ph.alpha_at_prop = stats.as_ref().map(|st| st.alpha);
                ph.dominant_at_prop = stats.map(|st| st.c.iter().cloned().fold(0.0, f64::max));
                if self.params.snapshot_interval.is_some() {
                    self.snapshots.push(self.snapshot(now));
                }
            }
            LeaderChange::NextGeneration => {
                let old = self.leader.gen - 1;
                let alpha = self.stats_of(old).map(|st| st.alpha);
                {
                    let ph = self.phases.last_mut().expect("phase");
                    ph.end_time = Some(now);
                    ph.alpha_at_end = alpha;
                }
                // Generation `old` and everything above it share one color?
                let mut color = None;
                let mut mixed = false;
                for row in &self.counts[old as usize..] {
                    for (j, &c) in row.iter().enumerate() {
                        if c > 0 {
                            match color {
                                None => color = Some(OpinionId(j as u32)),
                                Some(x) if x.index() != j => mixed = true,
                                _ => {}
                            }
                        }
                    }
                }
                if !mixed && color.is_some() && self.mono[old as usize].is_none() {
                    self.mono[old as usize] = color;
                    self.inv.mono_locks += 1;
                }
                self.phases.push(PhaseRecord {
                    generation: self.leader.gen,
                    birth_time: now,
                    first_promotion: None,
                    prop_time: None,
                    size_at_prop: None,
                    alpha_at_prop: None,
                    dominant_at_prop: None,
                    alpha_at_end: None,
                    end_time: None,
                });
                if self.params.snapshot_interval.is_some() {
                    self.snapshots.push(self.snapshot(now));
                }
            }
        }
    }
}

impl Process for World {
    type Event = Ev;

    fn handle(&mut self, ev: Scheduled<Ev>, sched: &mut Scheduler<Ev>) {
        let now = ev.time;
        self.catch_up_snapshots(now);
        match ev.event {
            Event::Tick(v) => {
                send_signal(sched, LEADER, 0, now, &self.latency, &mut self.rng);
                let vi = v as usize;
                if !self.locked[vi] {
                    self.locked[vi] = true;
                    let n = self.params.n as usize;
                    let a = self.rng.index(n) as NodeId;
                    let b = self.rng.index(n) as NodeId;
                    open_channels(sched, v, (a, b), &SINGLE_LEADER, now, &self.latency, &mut self.rng);
                }
                schedule_tick(sched, v, now, &mut self.rng);
            }
            Event::ChannelsReady(v, (a, b)) => {
                let vi = v as usize;
                let sample = |w: NodeId| Sample { opinion: self.opinions[w as usize], gen: self.gens[w as usize] };
                let own = sample(v);
                let (sa, sb) = (sample(a), sample(b));
                let leader = self.leader.view();
                let (next, kind) = node_step(own, self.cached[vi], leader, sa, sb);
                match kind {
                    StepKind::Refresh => self.cached[vi] = leader,
                    _ => {
                        self.set_node(vi, next, kind, now);
                        if next.gen > own.gen {
                            send_signal(sched, LEADER, next.gen, now, &self.latency, &mut self.rng);
                        }
                    }
                }
                self.locked[vi] = false;
            }
            Event::Signal(_, i) => {
                let change = self.leader.on_signal(i);
                self.on_leader_change(change, now);
            }
            Event::Timer(_) => {}
        }
    }

    fn done(&self) -> bool {
        self.full_time.is_some()
    }

    fn describe(e: &Ev) -> (&'static str, NodeId) {
        (e.label(), e.node())
    }
}

/// Runs the single-leader protocol on a fresh population.
pub fn run_single_leader(
    params: &SingleLeaderParams,
    seed: u64,
    trace: &mut dyn TraceSink,
) -> Result<AsyncRunResult> {
    let counts0 = initial_counts(params.n, params.k, params.alpha0)?;
    let plural = plurality(&counts0).unwrap_or(OpinionId(0));
    let mut orng = seeded_rng(seed, streams::OPINIONS);
    let opinions = assign_initial_opinions(params.n, params.k, params.alpha0, &mut orng)?;
    let n = params.n as usize;
    let cap = params.gen_cap as usize;
    let mut counts = vec![vec![0u64; params.k as usize]; cap + 1];
    counts[0] = counts0.clone();
    let leader = SingleLeaderState::new(params.prop_threshold(), params.size_threshold(), params.gen_cap);
    let mut world = World {
        params: params.clone(),
        latency: LatencyModel::new(params.lambda),
        rng: seeded_rng(seed, streams::DYNAMICS),
        opinions,
        gens: vec![0; n],
        locked: vec![false; n],
        cached: vec![(1, false); n],
        leader,
        counts,
        opinion_totals: counts0,
        prop_first: vec![None; cap + 1],
        mono: vec![None; cap + 1],
        phases: vec![PhaseRecord {
            generation: 1,
            birth_time: 0.0,
            first_promotion: None,
            prop_time: None,
            size_at_prop: None,
            alpha_at_prop: None,
            dominant_at_prop: None,
            alpha_at_end: None,
            end_time: None,
        }],
        inv: InvariantReport::default(),
        snapshots: Vec::new(),
        next_snapshot: 0.0,
        eps_need: (1.0 - params.epsilon) * params.n as f64,
        eps_time: None,
        winner: None,
        full_time: None,
    };
    world.check_convergence(0.0);

    let mut sched: Scheduler<Ev> = Scheduler::with_capacity(3 * n);
    for v in 0..n {
        schedule_tick(&mut sched, v as NodeId, 0.0, &mut world.rng);
    }
    let out: RunOutcome = run_until(&mut sched, &mut world, params.budget, trace);
    world.catch_up_snapshots(out.time);
    let end = out.time;
    if world.params.snapshot_interval.is_some() {
        world.snapshots.push(world.snapshot(end));
    }
    Ok(AsyncRunResult {
        plurality: plural,
        winner: world.winner,
        eps_time: world.eps_time,
        full_time: world.full_time,
        end_time: end,
        events: out.events,
        stop: out.reason,
        c1: params.c1,
        gen_cap: params.gen_cap,
        phases: world.phases,
        invariants: world.inv,
        snapshots: world.snapshots,
    })
}
