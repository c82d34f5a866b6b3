//! Consensus among many cluster leaders.
//!
//! Each qualifying cluster has a leader with a public `(gen, state)` pair:
//! state 1 allows two-choices into `gen`, state 2 sleeps, state 3 allows
//! propagation. Leaders count their members' 0-signals to move from 1 to 2 to
//! 3, and count reports of members entering `gen` to start the next
//! generation. A member step samples three nodes, reads the pair of its own
//! leader and of the leader `l` of the third sample, and acts on `l`'s pair.
//! The report it sends home carries whatever it saw, so a leader that lags
//! behind the one its members sample jumps forward lexicographically.
//!
//! A leader that moves to a new generation also relays `(gen, 1)` for a
//! broadcast window; a member talking to two leaders passes the relayed value
//! from one to the other.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::clustering::ClusterLayout;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::event::{
    open_channels, run_until, schedule_tick, send_signal, Event, LatencyModel, Process, Scheduled,
    Scheduler, StopReason, TraceSink, MULTI_LEADER,
};
use crate::metrics::{async_timeline, derive_stats, GenerationPoint, PopulationSnapshot};
use crate::params::multi_leader_gen_cap;
use crate::population::{assign_initial_opinions, initial_counts, plurality};
use crate::rng::{seeded_rng, streams, SimRng};
use crate::types::{NodeId, OpinionId};

const NONE: u32 = u32::MAX;

/// `(C2, C3)` from the time unit and the broadcast constant.
pub fn compute_phase_constants(c1: f64, c_br: f64) -> (f64, f64) {
    (c_br + 1.0 + 2.0 / c1, 2.0 * c_br + 1.0 + 5.0 / c1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiLeaderParams {
    pub n: u64,
    pub k: u32,
    pub alpha0: f64,
    pub lambda: f64,
    /// Time unit in time steps.
    pub c1: f64,
    /// Broadcast constant in time units.
    pub c_br: f64,
    pub gen_cap: u32,
    pub epsilon: f64,
    /// Relay window for generation changes, in time units.
    pub broadcast_window: f64,
    /// Consensus-stage budget in time steps.
    pub budget: f64,
    pub snapshot_interval: Option<f64>,
}

pub const DEFAULT_BUDGET_UNITS: f64 = 200.0;

impl MultiLeaderParams {
    pub fn from_config(config: &ExperimentConfig, c1: f64, c_br: f64) -> Result<Self> {
        config.validate()?;
        let gen_cap = match config.generation_cap {
            Some(g) => g,
            None if config.k == 1 => 1,
            None => multi_leader_gen_cap(config.n, config.alpha0)?,
        };
        Ok(MultiLeaderParams {
            n: config.n,
            k: config.k,
            alpha0: config.alpha0,
            lambda: config.lambda,
            c1,
            c_br,
            gen_cap,
            epsilon: config.resolved_epsilon(),
            broadcast_window: config.cluster.broadcast_window.unwrap_or(5.0),
            budget: config.budget.unwrap_or(DEFAULT_BUDGET_UNITS) * c1,
            snapshot_interval: Some(config.snapshot_interval),
        })
    }

    pub fn phase_constants(&self) -> (f64, f64) {
        compute_phase_constants(self.c1, self.c_br)
    }

    /// Members that must report a generation before the leader moves on.
    pub fn generation_target(&self, card: u64) -> u64 {
        let l = (self.n as f64).log2().max(1.0);
        ((card as f64) * (0.5 + 1.0 / l.sqrt())).ceil() as u64
    }
}

/// Report sent from a member to its leader: `(i, s, has_changed)`.
pub type MlSignal = (u32, u8, bool);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderMove {
    None,
    /// Adopted a lexicographically larger pair from a report or a relay.
    Jump,
    Sleep,
    Propagate,
    NextGeneration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultiLeaderState {
    /// 0 until the cluster enters consensus.
    pub gen: u32,
    pub state: u8,
    pub t: u64,
    pub gen_size: u64,
    pub card: u64,
    pub sleep_at: u64,
    pub propagate_at: u64,
    pub target: u64,
    pub cap: u32,
}

impl MultiLeaderState {
    pub fn new(params: &MultiLeaderParams, card: u64) -> Self {
        let (c2, c3) = params.phase_constants();
        let scale = params.c1 * card as f64;
        MultiLeaderState {
            gen: 0,
            state: 1,
            t: 0,
            gen_size: 0,
            card,
            sleep_at: (scale * c2).ceil() as u64,
            propagate_at: (scale * c3).ceil() as u64,
            target: params.generation_target(card),
            cap: params.gen_cap,
        }
    }

    pub fn active(&self) -> bool {
        self.gen > 0
    }

    pub fn view(&self) -> (u32, u8) {
        (self.gen, self.state)
    }

    pub fn activate(&mut self) {
        if self.gen == 0 {
            self.gen = 1;
            self.state = 1;
            self.t = 0;
            self.gen_size = 0;
        }
    }

    /// Moves to `(i, s)` if it is lexicographically ahead.
    pub fn catch_up(&mut self, i: u32, s: u8) -> bool {
        if (i, s) <= (self.gen, self.state) {
            return false;
        }
        if i > self.gen {
            self.gen_size = 0;
        }
        self.gen = i;
        self.state = s;
        self.t = match s {
            1 => 0,
            2 => self.sleep_at,
            _ => self.propagate_at,
        };
        true
    }

    pub fn on_signal(&mut self, (i, s, changed): MlSignal) -> LeaderMove {
        if !self.active() {
            return LeaderMove::None;
        }
        let mut mv = LeaderMove::None;
        // 0-signals carry s = 3 and must not end a phase early.
        if (changed || i > 0) && self.catch_up(i, s) {
            mv = LeaderMove::Jump;
        }
        if i == 0 {
            self.t += 1;
            if self.state == 1 && self.t >= self.sleep_at {
                self.state = 2;
                mv = LeaderMove::Sleep;
            }
            if self.state == 2 && self.t >= self.propagate_at {
                self.state = 3;
                mv = LeaderMove::Propagate;
            }
        }
        if i == self.gen && changed {
            self.gen_size += 1;
            if self.state == 3 && self.gen < self.cap && self.gen_size >= self.target {
                self.gen += 1;
                self.state = 1;
                self.t = 0;
                self.gen_size = 0;
                mv = LeaderMove::NextGeneration;
            }
        }
        mv
    }
}

/// What a member sees of a node: color, generation and its last leader view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlSample {
    pub opinion: OpinionId,
    pub gen: u32,
    pub tmp: (u32, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MlStepKind {
    TwoChoices,
    Propagation,
    Idle,
}

/// One member step against the pair `l` of a sampled leader. Returns the new
/// `(opinion, gen)`, the kind of update and the report for the own leader.
pub fn ml_node_step(
    own: MlSample,
    v1: MlSample,
    v2: MlSample,
    l: (u32, u8),
) -> ((OpinionId, u32), MlStepKind, MlSignal) {
    let (lg, ls) = l;
    if ls == 3 {
        for v in [v1, v2] {
            if own.gen < v.gen && v.gen == lg && v.tmp == l {
                return ((v.opinion, v.gen), MlStepKind::Propagation, (v.gen, 3, true));
            }
        }
    }
    if ls == 1
        && lg >= 1
        && v1.gen + 1 == lg
        && v2.gen + 1 == lg
        && own.gen < lg
        && v1.opinion == v2.opinion
        && v1.tmp == l
        && v2.tmp == l
        && own.tmp == l
    {
        return ((v1.opinion, lg), MlStepKind::TwoChoices, (lg, 1, true));
    }
    ((own.opinion, own.gen), MlStepKind::Idle, (lg, ls, false))
}

/// A change of one leader's public pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderTransition {
    pub cluster: u32,
    pub time: f64,
    pub gen: u32,
    pub state: u8,
    pub gen_size: u64,
    pub cause: LeaderMove,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MlInvariantReport {
    pub checked_updates: u64,
    pub gen_decrease: u64,
    /// Propagation into a generation no leader had opened for propagation.
    pub early_propagation: u64,
    pub finished_changed: u64,
    pub leader_regress: u64,
}

impl MlInvariantReport {
    pub fn violations(&self) -> u64 {
        self.gen_decrease + self.early_propagation + self.finished_changed + self.leader_regress
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiLeaderRunResult {
    pub plurality: OpinionId,
    pub winner: Option<OpinionId>,
    /// Consensus-stage times, in time steps from the first activation.
    pub eps_time: Option<f64>,
    pub full_time: Option<f64>,
    pub end_time: f64,
    pub events: u64,
    pub stop: StopReason,
    pub c1: f64,
    pub c_br: f64,
    pub gen_cap: u32,
    pub clusters: u32,
    pub transitions: Vec<LeaderTransition>,
    /// `(time, max gen - min gen)` over active leaders.
    pub desync: Vec<(f64, u32)>,
    /// `(generation, time, alpha, dominant fraction)` when the first leader
    /// opened propagation for that generation.
    pub prop_marks: Vec<(u32, f64, f64, f64)>,
    pub invariants: MlInvariantReport,
    #[serde(skip)]
    pub snapshots: Vec<PopulationSnapshot>,
}

impl MultiLeaderRunResult {
    pub fn eps_converged_to_plurality(&self) -> bool {
        self.eps_time.is_some() && self.winner == Some(self.plurality)
    }

    /// Per-generation bias at the first propagation switch, times in time units.
    pub fn generation_timeline(&self, initial: &[u64]) -> Vec<GenerationPoint> {
        async_timeline(initial, self.prop_marks.iter().map(|&(g, t, a, d)| (g, t / self.c1, a, d)))
    }

    /// Fraction of sampled instants with leader generations at most one apart.
    pub fn desync_ok_fraction(&self) -> f64 {
        if self.desync.is_empty() {
            return 1.0;
        }
        self.desync.iter().filter(|&&(_, d)| d <= 1).count() as f64 / self.desync.len() as f64
    }

    pub fn max_desync(&self) -> u32 {
        self.desync.iter().map(|&(_, d)| d).max().unwrap_or(0)
    }

    /// For every generation all leaders reached: whether some instant had all
    /// of them in state 1 of that generation.
    pub fn common_two_choices_window(&self) -> Vec<(u32, bool)> {
        // Per cluster and generation: (entered state 1, left state 1).
        let mut spans: BTreeMap<(u32, u32), (Option<f64>, Option<f64>)> = BTreeMap::new();
        let mut last: BTreeMap<u32, (u32, u8)> = BTreeMap::new();
        for tr in &self.transitions {
            if let Some(&(g, s)) = last.get(&tr.cluster) {
                if s == 1 && (tr.gen, tr.state) != (g, 1) {
                    spans.entry((tr.cluster, g)).or_default().1.get_or_insert(tr.time);
                }
            }
            if tr.state == 1 {
                spans.entry((tr.cluster, tr.gen)).or_default().0.get_or_insert(tr.time);
            } else {
                spans.entry((tr.cluster, tr.gen)).or_default();
            }
            last.insert(tr.cluster, (tr.gen, tr.state));
        }
        let top = last.values().map(|&(g, _)| g).min().unwrap_or(0);
        (1..=top)
            .map(|g| {
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                let mut ok = true;
                for c in last.keys() {
                    match spans.get(&(*c, g)) {
                        Some(&(Some(a), b)) => {
                            lo = lo.max(a);
                            hi = hi.min(b.unwrap_or(f64::INFINITY));
                        }
                        _ => ok = false,
                    }
                }
                (g, ok && lo < hi)
            })
            .collect()
    }
}

type Ev = Event<(NodeId, NodeId, NodeId), MlSignal>;

struct World {
    params: MultiLeaderParams,
    latency: LatencyModel,
    rng: SimRng,
    window: f64,
    /// Qualifying cluster of each node, `NONE` otherwise.
    cluster: Vec<u32>,
    leader_node: Vec<NodeId>,
    leaders: Vec<MultiLeaderState>,
    /// Relayed generation and relay deadline per leader.
    relay: Vec<Option<(u32, f64)>>,
    opinions: Vec<OpinionId>,
    gens: Vec<u32>,
    tmp: Vec<(u32, u8)>,
    finished: Vec<bool>,
    finished_count: u64,
    locked: Vec<bool>,
    counts: Vec<Vec<u64>>,
    opinion_totals: Vec<u64>,
    prop_open: Vec<Option<f64>>,
    transitions: Vec<LeaderTransition>,
    desync: Vec<(f64, u32)>,
    prop_marks: Vec<(u32, f64, f64, f64)>,
    inv: MlInvariantReport,
    snapshots: Vec<PopulationSnapshot>,
    next_snapshot: f64,
    next_desync: f64,
    desync_dt: f64,
    eps_need: f64,
    eps_time: Option<f64>,
    winner: Option<OpinionId>,
    full_time: Option<f64>,
}

impl World {
    fn snapshot(&self, time: f64) -> PopulationSnapshot {
        PopulationSnapshot { time, k: self.params.k, counts: self.counts.clone() }
    }

    fn catch_up_samples(&mut self, now: f64) {
        if let Some(dt) = self.params.snapshot_interval {
            while self.next_snapshot <= now {
                let s = self.snapshot(self.next_snapshot);
                self.snapshots.push(s);
                self.next_snapshot += dt;
            }
        }
        while self.next_desync <= now {
            let active = self.leaders.iter().filter(|l| l.active()).map(|l| l.gen);
            let (lo, hi) = active.fold((u32::MAX, 0), |(lo, hi), g| (lo.min(g), hi.max(g)));
            if hi > 0 {
                self.desync.push((self.next_desync, hi - lo));
            }
            self.next_desync += self.desync_dt;
        }
    }

    fn record(&mut self, c: usize, now: f64, cause: LeaderMove, before: (u32, u8)) {
        let l = &self.leaders[c];
        if l.view() < before {
            self.inv.leader_regress += 1;
        }
        if l.view() == before {
            return;
        }
        if l.state == 3 && self.prop_open[l.gen as usize].is_none() {
            let g = l.gen;
            self.prop_open[g as usize] = Some(now);
            let snap = self.snapshot(now);
            if let Some(Some(st)) = derive_stats(&snap).get(g as usize) {
                let dom = st.c.iter().cloned().fold(0.0, f64::max);
                self.prop_marks.push((g, now, st.alpha, dom));
            }
        }
        if l.gen > before.0 {
            self.relay[c] = Some((l.gen, now + self.window));
        }
        self.transitions.push(LeaderTransition {
            cluster: c as u32,
            time: now,
            gen: l.gen,
            state: l.state,
            gen_size: l.gen_size,
            cause,
        });
    }

    fn set_node(&mut self, v: usize, opinion: OpinionId, gen: u32, kind: MlStepKind, now: f64) {
        let (o0, g0) = (self.opinions[v], self.gens[v]);
        if (o0, g0) == (opinion, gen) {
            return;
        }
        self.inv.checked_updates += 1;
        if gen < g0 {
            self.inv.gen_decrease += 1;
        }
        if self.finished[v] && opinion != o0 {
            self.inv.finished_changed += 1;
        }
        if kind == MlStepKind::Propagation && gen > g0 && self.prop_open[gen as usize].is_none_or(|t| t > now) {
            self.inv.early_propagation += 1;
        }
        self.counts[g0 as usize][o0.index()] -= 1;
        self.counts[gen as usize][opinion.index()] += 1;
        self.opinion_totals[o0.index()] -= 1;
        self.opinion_totals[opinion.index()] += 1;
        self.opinions[v] = opinion;
        self.gens[v] = gen;
        self.check_convergence(now);
    }

    fn finish(&mut self, v: usize) {
        if !self.finished[v] {
            self.finished[v] = true;
            self.finished_count += 1;
        }
    }

    fn check_convergence(&mut self, now: f64) {
        if self.eps_time.is_none() {
            if let Some(j) = self.opinion_totals.iter().position(|&c| c > 0 && c as f64 >= self.eps_need) {
                self.eps_time = Some(now);
                self.winner = Some(OpinionId(j as u32));
            }
        }
        if self.full_time.is_none() && self.opinion_totals.contains(&self.params.n) {
            self.full_time = Some(now);
        }
    }

    fn sample(&self, w: NodeId) -> MlSample {
        let w = w as usize;
        MlSample { opinion: self.opinions[w], gen: self.gens[w], tmp: self.tmp[w] }
    }

    /// Passes a live relay from leader `a` to leader `b`.
    fn relay_between(&mut self, a: usize, b: usize, now: f64) {
        if let Some((g, deadline)) = self.relay[a] {
            if now <= deadline && self.leaders[b].active() {
                let before = self.leaders[b].view();
                if self.leaders[b].catch_up(g, 1) {
                    self.record(b, now, LeaderMove::Jump, before);
                }
            }
        }
    }

    fn channels_ready(&mut self, v: NodeId, samples: [NodeId; 3], sched: &mut Scheduler<Ev>, now: f64) {
        let vi = v as usize;
        if self.finished[vi] {
            let (o, g) = (self.opinions[vi], self.gens[vi]);
            for w in samples {
                let wi = w as usize;
                if !self.finished[wi] {
                    self.set_node(wi, o, g.max(self.gens[wi]), MlStepKind::Idle, now);
                    self.finish(wi);
                }
            }
            return;
        }
        if let Some(&w) = samples.iter().find(|&&w| self.finished[w as usize]) {
            let wi = w as usize;
            let (o, g) = (self.opinions[wi], self.gens[wi]);
            self.set_node(vi, o, g.max(self.gens[vi]), MlStepKind::Idle, now);
            self.finish(vi);
            return;
        }
        let own_c = self.cluster[vi];
        let far_c = self.cluster[samples[2] as usize];
        if own_c == NONE || far_c == NONE {
            return;
        }
        let (own_c, far_c) = (own_c as usize, far_c as usize);
        if !self.leaders[own_c].active() || !self.leaders[far_c].active() {
            return;
        }
        if own_c != far_c {
            self.relay_between(own_c, far_c, now);
            self.relay_between(far_c, own_c, now);
        }
        let l = self.leaders[far_c].view();
        let own = self.sample(v);
        let ((o, g), kind, signal) = ml_node_step(own, self.sample(samples[0]), self.sample(samples[1]), l);
        self.set_node(vi, o, g, kind, now);
        send_signal(sched, self.leader_node[own_c], signal, now, &self.latency, &mut self.rng);
        self.tmp[vi] = self.leaders[own_c].view();
        if g >= self.params.gen_cap {
            self.finish(vi);
        }
    }
}

impl Process for World {
    type Event = Ev;

    fn handle(&mut self, ev: Scheduled<Ev>, sched: &mut Scheduler<Ev>) {
        let now = ev.time;
        self.catch_up_samples(now);
        match ev.event {
            Event::Tick(v) => {
                let vi = v as usize;
                let c = self.cluster[vi];
                if c != NONE {
                    send_signal(sched, self.leader_node[c as usize], (0, 3, false), now, &self.latency, &mut self.rng);
                }
                if !self.locked[vi] {
                    self.locked[vi] = true;
                    let n = self.params.n as usize;
                    let s = [self.rng.index(n), self.rng.index(n), self.rng.index(n)].map(|x| x as NodeId);
                    let stages: &[usize] = if c != NONE { &MULTI_LEADER } else { &[3] };
                    open_channels(sched, v, (s[0], s[1], s[2]), stages, now, &self.latency, &mut self.rng);
                }
                schedule_tick(sched, v, now, &mut self.rng);
            }
            Event::ChannelsReady(v, (a, b, d)) => {
                self.channels_ready(v, [a, b, d], sched, now);
                self.locked[v as usize] = false;
            }
            Event::Signal(leader, signal) => {
                let c = self.cluster[leader as usize] as usize;
                let before = self.leaders[c].view();
                let mv = self.leaders[c].on_signal(signal);
                self.record(c, now, mv, before);
            }
            Event::Timer(c) => {
                let c = c as usize;
                let before = self.leaders[c].view();
                self.leaders[c].activate();
                self.record(c, now, LeaderMove::Jump, before);
            }
        }
    }

    fn done(&self) -> bool {
        self.full_time.is_some() || self.finished_count == self.params.n
    }

    fn describe(e: &Ev) -> (&'static str, NodeId) {
        (e.label(), e.node())
    }
}

/// Runs the consensus stage on a finished clustering. Qualifying clusters
/// become active at their consensus-mode times, shifted so the first one
/// starts at zero.
pub fn run_multi_leader(
    params: &MultiLeaderParams,
    layout: &ClusterLayout,
    seed: u64,
    trace: &mut dyn TraceSink,
) -> Result<MultiLeaderRunResult> {
    let n = params.n as usize;
    if layout.n() != n {
        return Err(Error::param("layout", format!("covers {} nodes, expected {n}", layout.n())));
    }
    let qualifying: Vec<usize> = (0..layout.leaders.len()).filter(|&c| layout.qualifying(c)).collect();
    if qualifying.is_empty() {
        return Err(Error::Degenerate("no qualifying cluster".into()));
    }
    let mut index = vec![NONE; layout.leaders.len()];
    for (i, &c) in qualifying.iter().enumerate() {
        index[c] = i as u32;
    }
    let cluster: Vec<u32> = layout.cluster_of.iter().map(|c| c.map_or(NONE, |c| index[c as usize])).collect();
    let leaders: Vec<MultiLeaderState> =
        qualifying.iter().map(|&c| MultiLeaderState::new(params, u64::from(layout.sizes[c]))).collect();
    let start = qualifying.iter().filter_map(|&c| layout.consensus_time[c]).fold(f64::INFINITY, f64::min);
    let start = if start.is_finite() { start } else { 0.0 };

    let counts0 = initial_counts(params.n, params.k, params.alpha0)?;
    let plural = plurality(&counts0).unwrap_or(OpinionId(0));
    let mut orng = seeded_rng(seed, streams::OPINIONS);
    let opinions = assign_initial_opinions(params.n, params.k, params.alpha0, &mut orng)?;
    let cap = params.gen_cap as usize;
    let mut counts = vec![vec![0u64; params.k as usize]; cap + 1];
    counts[0] = counts0.clone();
    let q = qualifying.len();
    let mut world = World {
        params: params.clone(),
        latency: LatencyModel::new(params.lambda),
        rng: seeded_rng(seed, streams::CONSENSUS),
        window: params.broadcast_window * params.c1,
        cluster,
        leader_node: qualifying.iter().map(|&c| layout.leaders[c]).collect(),
        leaders,
        relay: vec![None; q],
        opinions,
        gens: vec![0; n],
        tmp: vec![(1, 1); n],
        finished: vec![false; n],
        finished_count: 0,
        locked: vec![false; n],
        counts,
        opinion_totals: counts0,
        prop_open: vec![None; cap + 1],
        transitions: Vec::new(),
        desync: Vec::new(),
        prop_marks: Vec::new(),
        inv: MlInvariantReport::default(),
        snapshots: Vec::new(),
        next_snapshot: 0.0,
        next_desync: 0.0,
        desync_dt: 0.25 * params.c1,
        eps_need: (1.0 - params.epsilon) * params.n as f64,
        eps_time: None,
        winner: None,
        full_time: None,
    };
    world.check_convergence(0.0);

    let mut sched: Scheduler<Ev> = Scheduler::with_capacity(3 * n);
    for (i, &c) in qualifying.iter().enumerate() {
        let at = layout.consensus_time[c].map_or(0.0, |t| t - start);
        sched.schedule_at(at, Event::Timer(i as NodeId));
    }
    for v in 0..n {
        schedule_tick(&mut sched, v as NodeId, 0.0, &mut world.rng);
    }
    let out = run_until(&mut sched, &mut world, params.budget, trace);
    world.catch_up_samples(out.time);
    if world.params.snapshot_interval.is_some() {
        world.snapshots.push(world.snapshot(out.time));
    }
    Ok(MultiLeaderRunResult {
        plurality: plural,
        winner: world.winner,
        eps_time: world.eps_time,
        full_time: world.full_time,
        end_time: out.time,
        events: out.events,
        stop: out.reason,
        c1: params.c1,
        c_br: params.c_br,
        gen_cap: params.gen_cap,
        clusters: q as u32,
        transitions: world.transitions,
        desync: world.desync,
        prop_marks: world.prop_marks,
        invariants: world.inv,
        snapshots: world.snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::NoTrace;

    const RED: OpinionId = OpinionId(0);
    const BLUE: OpinionId = OpinionId(1);

    fn s(opinion: OpinionId, gen: u32, tmp: (u32, u8)) -> MlSample {
        MlSample { opinion, gen, tmp }
    }

    fn params() -> MultiLeaderParams {
        MultiLeaderParams {
            n: 10_000,
            k: 2,
            alpha0: 1.5,
            lambda: 1.0,
            c1: 10.0,
            c_br: 2.0,
            gen_cap: 5,
            epsilon: 0.01,
            broadcast_window: 5.0,
            budget: 1000.0,
            snapshot_interval: None,
        }
    }

    #[test]
    fn phase_constants() {
        let (c2, c3) = compute_phase_constants(10.0 / 3.0, 2.0);
        assert!((c2 - 3.6).abs() < 1e-12);
        assert!((c3 - 6.5).abs() < 1e-12);
        let (c2, c3) = compute_phase_constants(1e12, 1.5);
        assert!((c2 - 2.5).abs() < 1e-9 && (c3 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn two_choices_branch() {
        let l = (2, 1);
        let (next, kind, sig) = ml_node_step(s(BLUE, 1, l), s(RED, 1, l), s(RED, 1, l), l);
        assert_eq!((next, kind, sig), ((RED, 2), MlStepKind::TwoChoices, (2, 1, true)));
        // Stale view blocks it.
        let (_, kind, sig) = ml_node_step(s(BLUE, 1, (1, 3)), s(RED, 1, l), s(RED, 1, l), l);
        assert_eq!((kind, sig), (MlStepKind::Idle, (2, 1, false)));
    }

    #[test]
    fn propagation_branch() {
        let l = (2, 3);
        let (next, kind, sig) = ml_node_step(s(RED, 0, l), s(BLUE, 2, l), s(RED, 0, l), l);
        assert_eq!((next, kind, sig), ((BLUE, 2), MlStepKind::Propagation, (2, 3, true)));
    }

    #[test]
    fn sleeping_blocks_both() {
        let l = (2, 2);
        let (next, kind, sig) = ml_node_step(s(RED, 1, l), s(BLUE, 2, l), s(BLUE, 1, l), l);
        assert_eq!((next, kind, sig), ((RED, 1), MlStepKind::Idle, (2, 2, false)));
    }

    #[test]
    fn member_ahead_jump() {
        let mut l = MultiLeaderState::new(&params(), 100);
        l.activate();
        l.catch_up(2, 3);
        assert_eq!(l.on_signal((3, 1, true)), LeaderMove::Jump);
        assert_eq!((l.gen, l.state, l.t), (3, 1, 0));
        assert_eq!(l.gen_size, 1);
    }

    #[test]
    fn zero_signal_does_not_jump() {
        let mut l = MultiLeaderState::new(&params(), 100);
        l.activate();
        assert_eq!(l.on_signal((0, 3, false)), LeaderMove::None);
        assert_eq!((l.state, l.t), (1, 1));
    }

    #[test]
    fn sleep_then_propagate() {
        let mut l = MultiLeaderState::new(&params(), 100);
        l.activate();
        l.t = l.sleep_at - 1;
        assert_eq!(l.on_signal((0, 3, false)), LeaderMove::Sleep);
        l.t = l.propagate_at - 1;
        assert_eq!(l.on_signal((0, 3, false)), LeaderMove::Propagate);
        assert_eq!(l.state, 3);
    }

    #[test]
    fn generation_target_reached() {
        let p = params();
        let mut l = MultiLeaderState::new(&p, 100);
        assert_eq!(l.target, p.generation_target(100));
        l.activate();
        l.catch_up(1, 3);
        l.gen_size = l.target - 1;
        assert_eq!(l.on_signal((1, 3, true)), LeaderMove::NextGeneration);
        assert_eq!((l.gen, l.state, l.t, l.gen_size), (2, 1, 0, 0));
    }

    #[test]
    fn inactive_leader_ignores_reports() {
        let mut l = MultiLeaderState::new(&params(), 100);
        assert_eq!(l.on_signal((3, 1, true)), LeaderMove::None);
        assert_eq!(l.view(), (0, 1));
    }

    #[test]
    fn single_opinion_is_converged_at_start() {
        let mut p = params();
        p.n = 100;
        p.k = 1;
        p.alpha0 = 1.0;
        let layout = ClusterLayout::uniform(2, 50);
        let r = run_multi_leader(&p, &layout, 1, &mut NoTrace).unwrap();
        assert_eq!(r.eps_time, Some(0.0));
        assert_eq!(r.full_time, Some(0.0));
    }
}
