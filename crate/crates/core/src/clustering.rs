//! Leader self-election, cluster formation and broadcast among cluster leaders.
//!
//! Every node becomes a leader independently with a small probability. An
//! unassigned node opens channels to three random nodes and asks to join the
//! leader of the first one that has a leader. A leader accepts until its
//! cluster holds `size_cap` members; those first members are its counters and
//! keep sending it 0-signals. After `wait1` such signals the leader accepts
//! joins again, and after `wait2` more it switches to consensus mode and starts
//! a broadcast. Members relay the broadcast: at each tick a member contacts its
//! own leader and the leaders of two random nodes, and if any of the three is
//! broadcasting, all three learn the message. A leader that learns it with at
//! least `size_cap` members joins consensus mode itself and relays for
//! `broadcast_window`; a smaller one becomes dormant.

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::event::{
    open_channels, run_until, schedule_tick, send_signal, Event, LatencyModel, Process, Scheduled,
    Scheduler, StopReason, TraceSink,
};
use crate::rng::{seeded_rng, streams, SimRng};
use crate::types::NodeId;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteringParams {
    pub leader_probability: f64,
    pub size_cap: u32,
    pub wait1: u64,
    pub wait2: u64,
    /// Relay window of a leader in consensus mode, in time units.
    pub broadcast_window: f64,
    pub lambda: f64,
    /// Time unit in time steps.
    pub c1: f64,
    /// Hard stop for cluster formation, in time steps.
    pub budget: f64,
}

fn loglog_ceil(n: u64) -> u64 {
    ((n as f64).log2().max(2.0).log2()).ceil().max(1.0) as u64
}

impl ClusteringParams {
    /// Desk-scale defaults: `size_cap = ceil(log^2 n / 4)`, leaders with
    /// probability `1 / (2 size_cap)`, `wait1 = 4 size_cap ceil(log log n)`,
    /// `wait2 = 8 size_cap ceil(log log n)`, a 5 time-unit window.
    pub fn defaults(n: u64, lambda: f64, c1: f64) -> Self {
        let l = (n as f64).log2().max(1.0);
        let size_cap = ((l * l / 4.0).ceil() as u32).max(1);
        let ll = loglog_ceil(n);
        ClusteringParams {
            leader_probability: (1.0 / (2.0 * f64::from(size_cap))).min(1.0),
            size_cap,
            wait1: 4 * u64::from(size_cap) * ll,
            wait2: 8 * u64::from(size_cap) * ll,
            broadcast_window: 5.0,
            lambda,
            c1,
            budget: 200.0 * c1,
        }
    }

    pub fn from_config(config: &ExperimentConfig, c1: f64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::defaults(config.n, config.lambda, c1);
        let c = &config.cluster;
        if let Some(cap) = c.size_cap {
            p.size_cap = cap;
            p.leader_probability = (1.0 / (2.0 * f64::from(cap))).min(1.0);
            let ll = loglog_ceil(config.n);
            p.wait1 = 4 * u64::from(cap) * ll;
            p.wait2 = 8 * u64::from(cap) * ll;
        }
        if let Some(x) = c.leader_probability {
            p.leader_probability = x;
        }
        if let Some(x) = c.wait1 {
            p.wait1 = x;
        }
        if let Some(x) = c.wait2 {
            p.wait2 = x;
        }
        if let Some(x) = c.broadcast_window {
            p.broadcast_window = x;
        }
        if let Some(b) = config.budget {
            p.budget = b * c1;
        }
        Ok(p)
    }

    pub fn window_steps(&self) -> f64 {
        self.broadcast_window * self.c1
    }
}

/// Each node becomes a leader independently with probability `p`.
pub fn elect_leaders(n: u64, p: f64, rng: &mut SimRng) -> Result<Vec<NodeId>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("leader_probability", format!("must lie in (0, 1], got {p}")));
    }
    Ok((0..n as NodeId).filter(|_| rng.bernoulli(p)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterPhase {
    Filling,
    Waiting1,
    Refilling,
    ConsensusMode,
    Dormant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterLeaderState {
    pub members: u32,
    pub counters: u32,
    pub accepting: bool,
    pub zero_count: u64,
    pub phase: ClusterPhase,
    pub broadcast_deadline: Option<f64>,
    pub consensus_time: Option<f64>,
    pub informed_time: Option<f64>,
}

impl Default for ClusterLeaderState {
    fn default() -> Self {
        ClusterLeaderState {
            members: 1,
            counters: 1,
            accepting: true,
            zero_count: 0,
            phase: ClusterPhase::Filling,
            broadcast_deadline: None,
            consensus_time: None,
            informed_time: None,
        }
    }
}

impl ClusterLeaderState {
    pub fn settled(&self) -> bool {
        matches!(self.phase, ClusterPhase::ConsensusMode | ClusterPhase::Dormant)
    }

    pub fn broadcasting(&self, now: f64) -> bool {
        self.phase == ClusterPhase::ConsensusMode && self.broadcast_deadline.is_some_and(|d| now <= d)
    }

    /// Admits one node. Returns whether it is a counter, or `None` if refused.
    pub fn try_join(&mut self, cap: u32) -> Option<bool> {
        if !self.accepting {
            return None;
        }
        self.members += 1;
        let counter = self.counters < cap;
        if counter {
            self.counters += 1;
        }
        if self.phase == ClusterPhase::Filling && self.counters >= cap {
            self.phase = ClusterPhase::Waiting1;
            self.accepting = false;
            self.zero_count = 0;
        }
        Some(counter)
    }

    /// Counts one 0-signal from a counter. Returns `true` when the leader has
    /// just switched to consensus mode on its own.
    pub fn on_zero_signal(&mut self, params: &ClusteringParams, now: f64) -> bool {
        match self.phase {
            ClusterPhase::Waiting1 => {
                self.zero_count += 1;
                if self.zero_count >= params.wait1 {
                    self.phase = ClusterPhase::Refilling;
                    self.accepting = true;
                    self.zero_count = 0;
                }
                false
            }
            ClusterPhase::Refilling => {
                self.zero_count += 1;
                if self.zero_count >= params.wait2 {
                    self.enter_consensus(params, now);
                    return true;
                }
                false
            }
            _ => false,
        }
    }

    fn enter_consensus(&mut self, params: &ClusteringParams, now: f64) {
        self.phase = ClusterPhase::ConsensusMode;
        self.accepting = false;
        self.consensus_time = Some(now);
        self.informed_time.get_or_insert(now);
        self.broadcast_deadline = Some(now + params.window_steps());
    }

    /// Receives the broadcast. Returns `true` if this made the leader join
    /// consensus mode.
    pub fn inform(&mut self, params: &ClusteringParams, now: f64) -> bool {
        if self.settled() {
            return false;
        }
        self.informed_time = Some(now);
        if self.members >= params.size_cap {
            self.enter_consensus(params, now);
            true
        } else {
            self.phase = ClusterPhase::Dormant;
            self.accepting = false;
            false
        }
    }
}

/// Final assignment of nodes to clusters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterLayout {
    /// Cluster index of each node.
    pub cluster_of: Vec<Option<u32>>,
    /// Leader node of each cluster.
    pub leaders: Vec<NodeId>,
    pub sizes: Vec<u32>,
    pub phase: Vec<ClusterPhase>,
    /// When each cluster's leader switched to consensus mode.
    pub consensus_time: Vec<Option<f64>>,
}

impl ClusterLayout {
    /// `clusters` equal clusters of `size` nodes, all qualifying, node `c * size`
    /// leading cluster `c`.
    pub fn uniform(clusters: u32, size: u32) -> Self {
        let n = (clusters * size) as usize;
        ClusterLayout {
            cluster_of: (0..n).map(|v| Some(v as u32 / size)).collect(),
            leaders: (0..clusters).map(|c| c * size).collect(),
            sizes: vec![size; clusters as usize],
            phase: vec![ClusterPhase::ConsensusMode; clusters as usize],
            consensus_time: vec![Some(0.0); clusters as usize],
        }
    }

    pub fn n(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn qualifying(&self, c: usize) -> bool {
        self.phase[c] == ClusterPhase::ConsensusMode
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterCensus {
    pub clusters: u32,
    pub qualifying: u32,
    pub dormant: u32,
    /// Leaders still counting when the deadline forced them dormant.
    pub forced_dormant: u32,
    /// `(size, number of clusters)` pairs, ascending.
    pub size_histogram: Vec<(u32, u32)>,
    pub unclustered: u64,
    pub in_qualifying: u64,
    pub t_f: Option<f64>,
    pub t_l: Option<f64>,
    pub end_time: f64,
}

impl ClusterCensus {
    pub fn qualifying_fraction(&self, n: u64) -> f64 {
        self.in_qualifying as f64 / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct ClusteringOutcome {
    pub layout: ClusterLayout,
    pub census: ClusterCensus,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ctx {
    Join(NodeId, NodeId, NodeId),
    Spread(NodeId, NodeId),
}

type Ev = Event<Ctx, ()>;

struct Formation<'a> {
    params: &'a ClusteringParams,
    latency: LatencyModel,
    rng: SimRng,
    cluster_of: Vec<u32>,
    counter: Vec<bool>,
    locked: Vec<bool>,
    leaders: Vec<NodeId>,
    states: Vec<ClusterLeaderState>,
    unsettled: usize,
    t_f: Option<f64>,
    forced: u32,
    finished: bool,
}

impl Formation<'_> {
    fn inform(&mut self, c: usize, now: f64) {
        let was = self.states[c].settled();
        self.states[c].inform(self.params, now);
        if !was && self.states[c].settled() {
            self.unsettled -= 1;
        }
    }

    fn own_consensus(&mut self, now: f64, sched: &mut Scheduler<Ev>) {
        self.unsettled -= 1;
        if self.t_f.is_none() {
            self.t_f = Some(now);
            sched.schedule_at(now + 4.0 * self.params.window_steps(), Event::Timer(0));
        }
    }
}

impl Process for Formation<'_> {
    type Event = Ev;

    fn handle(&mut self, ev: Scheduled<Ev>, sched: &mut Scheduler<Ev>) {
        let now = ev.time;
        let n = self.cluster_of.len();
        match ev.event {
            Event::Tick(v) => {
                let vi = v as usize;
                let c = self.cluster_of[vi];
                if c != NONE && self.counter[vi] {
                    send_signal(sched, self.leaders[c as usize], (), now, &self.latency, &mut self.rng);
                }
                if !self.locked[vi] {
                    self.locked[vi] = true;
                    if c == NONE {
                        let ctx = Ctx::Join(
                            self.rng.index(n) as NodeId,
                            self.rng.index(n) as NodeId,
                            self.rng.index(n) as NodeId,
                        );
                        open_channels(sched, v, ctx, &crate::event::CLUSTER_JOIN, now, &self.latency, &mut self.rng);
                    } else {
                        let ctx = Ctx::Spread(self.rng.index(n) as NodeId, self.rng.index(n) as NodeId);
                        open_channels(sched, v, ctx, &crate::event::MULTI_LEADER, now, &self.latency, &mut self.rng);
                    }
                }
                schedule_tick(sched, v, now, &mut self.rng);
            }
            Event::ChannelsReady(v, Ctx::Join(a, b, d)) => {
                let vi = v as usize;
                if self.cluster_of[vi] == NONE {
                    let found = [a, b, d].into_iter().map(|x| self.cluster_of[x as usize]).find(|&c| c != NONE);
                    if let Some(c) = found {
                        if let Some(is_counter) = self.states[c as usize].try_join(self.params.size_cap) {
                            self.cluster_of[vi] = c;
                            self.counter[vi] = is_counter;
                        }
                    }
                }
                self.locked[vi] = false;
            }
            Event::ChannelsReady(v, Ctx::Spread(a, b)) => {
                let vi = v as usize;
                let cs = [self.cluster_of[vi], self.cluster_of[a as usize], self.cluster_of[b as usize]];
                if cs.iter().any(|&c| c != NONE && self.states[c as usize].broadcasting(now)) {
                    for c in cs {
                        if c != NONE {
                            self.inform(c as usize, now);
                        }
                    }
                }
                self.locked[vi] = false;
            }
            Event::Signal(leader, ()) => {
                let c = self.cluster_of[leader as usize] as usize;
                if self.states[c].on_zero_signal(self.params, now) {
                    self.own_consensus(now, sched);
                }
            }
            Event::Timer(_) => {
                for st in &mut self.states {
                    if !st.settled() {
                        st.phase = ClusterPhase::Dormant;
                        st.accepting = false;
                        self.forced += 1;
                    }
                }
                self.unsettled = 0;
                self.finished = true;
            }
        }
        if self.unsettled == 0 {
            self.finished = true;
        }
    }

    fn done(&self) -> bool {
        self.finished
    }

    fn describe(e: &Ev) -> (&'static str, NodeId) {
        (e.label(), e.node())
    }
}

/// Runs leader election and cluster formation until every leader is in
/// consensus mode or dormant.
pub fn run_clustering(
    n: u64,
    params: &ClusteringParams,
    seed: u64,
    trace: &mut dyn TraceSink,
) -> Result<ClusteringOutcome> {
    let mut rng = seeded_rng(seed, streams::CLUSTERING);
    let leaders = elect_leaders(n, params.leader_probability, &mut rng)?;
    if leaders.is_empty() {
        return Err(Error::Degenerate(format!("no leader elected among {n} nodes")));
    }
    let nn = n as usize;
    let mut cluster_of = vec![NONE; nn];
    let mut counter = vec![false; nn];
    for (c, &l) in leaders.iter().enumerate() {
        cluster_of[l as usize] = c as u32;
        counter[l as usize] = true;
    }
    let mut states = vec![ClusterLeaderState::default(); leaders.len()];
    for st in &mut states {
        if st.counters >= params.size_cap {
            st.phase = ClusterPhase::Waiting1;
            st.accepting = false;
        }
    }
    let mut f = Formation {
        params,
        latency: LatencyModel::new(params.lambda),
        rng,
        cluster_of,
        counter,
        locked: vec![false; nn],
        unsettled: leaders.len(),
        leaders,
        states,
        t_f: None,
        forced: 0,
        finished: false,
    };
    let mut sched: Scheduler<Ev> = Scheduler::with_capacity(3 * nn);
    for v in 0..nn {
        schedule_tick(&mut sched, v as NodeId, 0.0, &mut f.rng);
    }
    let out = run_until(&mut sched, &mut f, params.budget, trace);
    if out.reason != StopReason::Predicate {
        for st in &mut f.states {
            if !st.settled() {
                st.phase = ClusterPhase::Dormant;
                f.forced += 1;
            }
        }
    }

    let k = f.leaders.len();
    let mut sizes = vec![0u32; k];
    for &c in &f.cluster_of {
        if c != NONE {
            sizes[c as usize] += 1;
        }
    }
    let phase: Vec<ClusterPhase> = f.states.iter().map(|s| s.phase).collect();
    let consensus_time: Vec<Option<f64>> = f.states.iter().map(|s| s.consensus_time).collect();
    let qualifying = phase.iter().filter(|&&p| p == ClusterPhase::ConsensusMode).count() as u32;
    let in_qualifying: u64 = (0..k).filter(|&c| phase[c] == ClusterPhase::ConsensusMode).map(|c| u64::from(sizes[c])).sum();
    let unclustered = f.cluster_of.iter().filter(|&&c| c == NONE).count() as u64;
    let mut hist = std::collections::BTreeMap::new();
    for &s in &sizes {
        *hist.entry(s).or_insert(0u32) += 1;
    }
    let t_l = consensus_time.iter().flatten().cloned().fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let census = ClusterCensus {
        clusters: k as u32,
        qualifying,
        dormant: k as u32 - qualifying,
        forced_dormant: f.forced,
        size_histogram: hist.into_iter().collect(),
        unclustered,
        in_qualifying,
        t_f: f.t_f,
        t_l,
        end_time: out.time,
    };
    let layout = ClusterLayout {
        cluster_of: f.cluster_of.iter().map(|&c| (c != NONE).then_some(c)).collect(),
        leaders: f.leaders,
        sizes,
        phase,
        consensus_time,
    };
    Ok(ClusteringOutcome { layout, census, events: out.events })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BroadcastResult {
    /// When each cluster's leader learned the message.
    pub informed_at: Vec<Option<f64>>,
    /// All qualifying leaders informed, in time steps from the start.
    pub completion: Option<f64>,
    /// `(time, informed leaders)` after every change.
    pub curve: Vec<(f64, u32)>,
    pub monotone: bool,
}

struct Spreading<'a> {
    layout: &'a ClusterLayout,
    latency: LatencyModel,
    rng: SimRng,
    window: f64,
    locked: Vec<bool>,
    informed_at: Vec<Option<f64>>,
    relays: Vec<bool>,
    remaining: usize,
    curve: Vec<(f64, u32)>,
    informed: u32,
}

impl Process for Spreading<'_> {
    type Event = Event<(NodeId, NodeId), ()>;

    fn handle(&mut self, ev: Scheduled<Self::Event>, sched: &mut Scheduler<Self::Event>) {
        let now = ev.time;
        let n = self.layout.n();
        match ev.event {
            Event::Tick(v) => {
                let vi = v as usize;
                if !self.locked[vi] && self.layout.cluster_of[vi].is_some() {
                    self.locked[vi] = true;
                    let ctx = (self.rng.index(n) as NodeId, self.rng.index(n) as NodeId);
                    open_channels(sched, v, ctx, &crate::event::MULTI_LEADER, now, &self.latency, &mut self.rng);
                }
                schedule_tick(sched, v, now, &mut self.rng);
            }
            Event::ChannelsReady(v, (a, b)) => {
                let cs = [v, a, b].map(|x| self.layout.cluster_of[x as usize]);
                let active = |c: usize, s: &Self| {
                    s.relays[c] && s.informed_at[c].is_some_and(|t| now <= t + s.window)
                };
                if cs.iter().flatten().any(|&c| active(c as usize, self)) {
                    for c in cs.into_iter().flatten() {
                        let c = c as usize;
                        if self.informed_at[c].is_none() {
                            self.informed_at[c] = Some(now);
                            self.informed += 1;
                            self.curve.push((now, self.informed));
                            if self.layout.qualifying(c) {
                                self.remaining -= 1;
                            }
                        }
                    }
                }
                self.locked[v as usize] = false;
            }
            Event::Signal(..) | Event::Timer(_) => {}
        }
    }

    fn done(&self) -> bool {
        self.remaining == 0
    }

    fn describe(e: &Self::Event) -> (&'static str, NodeId) {
        (e.label(), e.node())
    }
}

/// Spreads one message from the leader of cluster `origin` over a fixed
/// layout. Qualifying leaders relay for `window` time steps after learning it.
pub fn broadcast_among_clusters(
    layout: &ClusterLayout,
    origin: usize,
    lambda: f64,
    window: f64,
    budget: f64,
    seed: u64,
    trace: &mut dyn TraceSink,
) -> BroadcastResult {
    let k = layout.leaders.len();
    let n = layout.n();
    let mut informed_at = vec![None; k];
    informed_at[origin] = Some(0.0);
    let relays: Vec<bool> = (0..k).map(|c| layout.qualifying(c)).collect();
    let remaining = (0..k).filter(|&c| c != origin && layout.qualifying(c)).count();
    let mut s = Spreading {
        layout,
        latency: LatencyModel::new(lambda),
        rng: seeded_rng(seed, streams::CLUSTERING),
        window,
        locked: vec![false; n],
        informed_at,
        relays,
        remaining,
        curve: vec![(0.0, 1)],
        informed: 1,
    };
    let mut sched = Scheduler::with_capacity(2 * n);
    for v in 0..n {
        schedule_tick(&mut sched, v as NodeId, 0.0, &mut s.rng);
    }
    let out = run_until(&mut sched, &mut s, budget, trace);
    let completion = (out.reason == StopReason::Predicate).then_some(out.time);
    let monotone = s.curve.windows(2).all(|w| w[1].1 >= w[0].1 && w[1].0 >= w[0].0);
    BroadcastResult { informed_at: s.informed_at, completion, curve: s.curve, monotone }
}

/// Broadcast constant in time units: the 95th percentile of completion times
/// over `trials` broadcasts on equal clusters of `2 size_cap` nodes. Falls
/// back to 3 if any trial fails to finish within 50 time units.
pub fn calibrate_broadcast_constant(n: u64, size_cap: u32, lambda: f64, c1: f64, trials: usize, seed: u64) -> f64 {
    const FALLBACK: f64 = 3.0;
    let size = (2 * size_cap).max(1);
    let clusters = ((n / u64::from(size)) as u32).max(1);
    let layout = ClusterLayout::uniform(clusters, size);
    let mut times = Vec::with_capacity(trials);
    for t in 0..trials {
        let r = broadcast_among_clusters(
            &layout,
            0,
            lambda,
            f64::INFINITY,
            50.0 * c1,
            crate::rng::trial_seed(seed, t as u64),
            &mut crate::event::NoTrace,
        );
        match r.completion {
            Some(x) => times.push(x / c1),
            None => return FALLBACK,
        }
    }
    if times.is_empty() {
        return FALLBACK;
    }
    times.sort_by(f64::total_cmp);
    let idx = ((0.95 * times.len() as f64).ceil() as usize).clamp(1, times.len()) - 1;
    times[idx].max(f64::MIN_POSITIVE)
}
