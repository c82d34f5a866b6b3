//! Round-synchronous generation protocol.
//!
//! Each round every node samples two nodes uniformly at random (itself and
//! repeats allowed). In a scheduled round a node whose two samples share a
//! generation at least its own and share a color is promoted one generation
//! above them. Otherwise a node pulls the opinion and generation of a sample
//! from a strictly higher generation. All nodes update simultaneously from the
//! state at the start of the round.

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::{derive_stats, GenerationPoint, PopulationSnapshot};
use crate::params::{generation_cap, generation_schedule};
use crate::population::{assign_initial_opinions, initial_counts, plurality};
use crate::rng::{seeded_rng, streams, SimRng};
use crate::types::{Generation, OpinionId};

/// `(opinion, generation)` of one node.
pub type NodeView = (OpinionId, Generation);

#[derive(Debug, Clone, PartialEq)]
pub struct SyncParams {
    pub n: u64,
    pub k: u32,
    pub alpha0: f64,
    pub gen_cap: u32,
    /// Rounds `t_1..t_G` in which two-choices promotions may happen.
    pub schedule: Vec<u64>,
    pub budget: u64,
    /// A run is won by the opinion held by at least `(1 - epsilon) n` nodes
    /// when it stops.
    pub epsilon: f64,
}

/// `50 (log k * max(1, log log n) + log log n) + 100` rounds.
pub fn default_round_budget(n: u64, k: u32) -> u64 {
    let llog = (n as f64).log2().max(1.0).log2().max(0.0);
    let lk = f64::from(k.max(1)).log2();
    (50.0 * (lk * llog.max(1.0) + llog) + 100.0).ceil() as u64
}

impl SyncParams {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let gen_cap = match config.generation_cap {
            Some(g) => g,
            None if config.k == 1 => 1,
            None => generation_cap(config.n, config.alpha0)?,
        };
        let schedule = generation_schedule(config.alpha0, config.k, config.gamma, gen_cap)?;
        let budget = config
            .budget
            .map_or_else(|| default_round_budget(config.n, config.k), |b| b.ceil() as u64);
        Ok(SyncParams {
            n: config.n,
            k: config.k,
            alpha0: config.alpha0,
            gen_cap,
            schedule,
            budget,
            epsilon: config.resolved_epsilon(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyncWorld {
    pub round: u64,
    pub opinions: Vec<OpinionId>,
    pub gens: Vec<Generation>,
    pub schedule: Vec<u64>,
    pub gen_cap: u32,
}

impl SyncWorld {
    pub fn new(opinions: Vec<OpinionId>, schedule: Vec<u64>, gen_cap: u32) -> Self {
        let gens = vec![Generation::ZERO; opinions.len()];
        SyncWorld { round: 0, opinions, gens, schedule, gen_cap }
    }

    pub fn len(&self) -> usize {
        self.opinions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opinions.is_empty()
    }

    pub fn view(&self, v: usize) -> NodeView {
        (self.opinions[v], self.gens[v])
    }

    /// Whether the round about to be computed allows two-choices.
    pub fn next_round_scheduled(&self) -> bool {
        self.schedule.binary_search(&(self.round + 1)).is_ok()
    }

    pub fn snapshot(&self, k: u32) -> PopulationSnapshot {
        PopulationSnapshot::from_nodes(self.round as f64, k, &self.opinions, &self.gens)
    }
}

/// New state of a node given its two samples.
pub fn sync_rule(own: NodeView, a: NodeView, b: NodeView, scheduled: bool, gen_cap: u32) -> NodeView {
    let (hi, lo) = if b.1 > a.1 { (b, a) } else { (a, b) };
    if scheduled && own.1 <= hi.1 && hi.1 == lo.1 && hi.0 == lo.0 && hi.1.0 < gen_cap {
        return (hi.0, hi.1.next());
    }
    if hi.1 > own.1 {
        return hi;
    }
    own
}

/// One round with the given per-node sample pairs.
pub fn sync_step_with_samples(world: &mut SyncWorld, samples: &[(u32, u32)]) {
    assert_eq!(samples.len(), world.len());
    let scheduled = world.next_round_scheduled();
    let mut next_op = Vec::with_capacity(world.len());
    let mut next_gen = Vec::with_capacity(world.len());
    for (v, &(a, b)) in samples.iter().enumerate() {
        let (o, g) = sync_rule(
            world.view(v),
            world.view(a as usize),
            world.view(b as usize),
            scheduled,
            world.gen_cap,
        );
        next_op.push(o);
        next_gen.push(g);
    }
    world.opinions = next_op;
    world.gens = next_gen;
    world.round += 1;
}

pub fn draw_samples(n: usize, rng: &mut SimRng) -> Vec<(u32, u32)> {
    (0..n).map(|_| (rng.index(n) as u32, rng.index(n) as u32)).collect()
}

pub fn sync_step(world: &mut SyncWorld, rng: &mut SimRng) {
    let samples = draw_samples(world.len(), rng);
    sync_step_with_samples(world, &samples);
}

#[derive(Debug, Clone, Serialize)]
pub struct SyncRunResult {
    pub plurality: OpinionId,
    /// Opinion held by at least `(1 - epsilon) n` nodes at the stop.
    pub winner: Option<OpinionId>,
    /// Full consensus reached.
    pub converged: bool,
    /// Every node sits at the cap, so nothing can change any more.
    pub frozen: bool,
    pub plurality_won: bool,
    pub rounds: u64,
    pub gen_cap: u32,
    pub schedule: Vec<u64>,
    /// One snapshot per round, starting with round 0.
    #[serde(skip)]
    pub snapshots: Vec<PopulationSnapshot>,
}

impl SyncRunResult {
    /// `(i, g_{t_{i+1}-1}(i))` for generations `1..G` that have a successor
    /// in the schedule and whose measuring round was reached.
    pub fn generation_growth(&self) -> Vec<(u32, f64)> {
        let mut out = Vec::new();
        for i in 1..self.schedule.len() {
            let t = self.schedule[i] - 1;
            if let Some(s) = self.snapshots.get(t as usize) {
                out.push((i as u32, s.generation_count(i) as f64 / s.total() as f64));
            }
        }
        out
    }

    /// Bias of each generation at its birth round and just before the next
    /// generation's birth.
    pub fn generation_timeline(&self) -> Vec<GenerationPoint> {
        let mut out = Vec::new();
        for i in 0..=self.schedule.len() {
            let birth = if i == 0 { 0 } else { self.schedule[i - 1] };
            let before_next = self.schedule.get(i).map_or(self.rounds, |&t| t - 1);
            let (Some(b), Some(p)) = (
                self.snapshots.get(birth as usize),
                self.snapshots.get(before_next as usize),
            ) else {
                break;
            };
            let (Some(Some(sb)), Some(Some(sp))) = (derive_stats(b).get(i).cloned(), derive_stats(p).get(i).cloned())
            else {
                break;
            };
            out.push(GenerationPoint {
                generation: i as u32,
                birth_time: birth as f64,
                alpha_at_birth: sb.alpha,
                alpha_at_prop: sp.alpha,
                dominant_fraction: sp.c.iter().cloned().fold(0.0, f64::max),
            });
        }
        out
    }
}

fn finished(world: &SyncWorld) -> bool {
    let first = world.opinions[0];
    if world.opinions.iter().any(|&o| o != first) {
        return false;
    }
    let g = world.gens[0];
    g.0 >= world.gen_cap && world.gens.iter().all(|&x| x == g)
}

/// All nodes at the cap: two-choices is capped and propagation needs a
/// higher generation, so no rule can fire again.
fn frozen(world: &SyncWorld) -> bool {
    world.gens.iter().all(|g| g.0 >= world.gen_cap)
}

/// Runs the synchronous protocol from a fresh initial configuration.
///
/// Stops once every node holds the same opinion and the same generation at
/// the cap, once every node is at the cap (no further change is possible),
/// or at once if the population starts with a single opinion.
pub fn run_sync(params: &SyncParams, seed: u64) -> Result<SyncRunResult> {
    let counts = initial_counts(params.n, params.k, params.alpha0)?;
    let plural = plurality(&counts).unwrap_or(OpinionId(0));
    let mut opinion_rng = seeded_rng(seed, streams::OPINIONS);
    let opinions = assign_initial_opinions(params.n, params.k, params.alpha0, &mut opinion_rng)?;
    let mut rng = seeded_rng(seed, streams::DYNAMICS);
    let mut world = SyncWorld::new(opinions, params.schedule.clone(), params.gen_cap);

    let mut snapshots = vec![world.snapshot(params.k)];
    let initially_uniform = snapshots[0].is_monochromatic();
    let mut converged = initially_uniform;
    let mut stuck = false;
    while !converged && !stuck && world.round < params.budget {
        sync_step(&mut world, &mut rng);
        snapshots.push(world.snapshot(params.k));
        converged = finished(&world);
        stuck = frozen(&world);
    }
    let totals = snapshots.last().expect("round 0 snapshot").opinion_totals();
    let need = (1.0 - params.epsilon) * params.n as f64;
    let winner = totals.iter().position(|&c| c > 0 && c as f64 >= need).map(|j| OpinionId(j as u32));
    Ok(SyncRunResult {
        plurality: plural,
        winner,
        converged,
        frozen: stuck || converged,
        plurality_won: winner == Some(plural),
        rounds: world.round,
        gen_cap: params.gen_cap,
        schedule: params.schedule.clone(),
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RED: OpinionId = OpinionId(0);
    const BLUE: OpinionId = OpinionId(1);

    fn g(x: u32) -> Generation {
        Generation(x)
    }

    #[test]
    fn propagation_pulls_higher_generation() {
        let out = sync_rule((BLUE, g(0)), (RED, g(1)), (BLUE, g(0)), false, 5);
        assert_eq!(out, (RED, g(1)));
        let out = sync_rule((BLUE, g(0)), (BLUE, g(0)), (RED, g(1)), false, 5);
        assert_eq!(out, (RED, g(1)));
    }

    #[test]
    fn two_choices_in_scheduled_round() {
        let out = sync_rule((BLUE, g(0)), (RED, g(0)), (RED, g(0)), true, 5);
        assert_eq!(out, (RED, g(1)));
        // Not scheduled: nothing to pull.
        let out = sync_rule((BLUE, g(0)), (RED, g(0)), (RED, g(0)), false, 5);
        assert_eq!(out, (BLUE, g(0)));
    }

    #[test]
    fn lower_samples_leave_node_alone() {
        let out = sync_rule((BLUE, g(2)), (RED, g(0)), (RED, g(0)), true, 5);
        assert_eq!(out, (BLUE, g(2)));
    }

    #[test]
    fn cap_suppresses_two_choices() {
        let out = sync_rule((BLUE, g(1)), (RED, g(2)), (RED, g(2)), true, 2);
        assert_eq!(out, (RED, g(2)));
    }

    #[test]
    fn single_opinion_converges_at_round_zero() {
        let params = SyncParams {
            n: 1000,
            k: 1,
            alpha0: 1.0,
            gen_cap: 1,
            schedule: vec![7],
            budget: 100,
            epsilon: 0.01,
        };
        let r = run_sync(&params, 3).unwrap();
        assert!(r.converged);
        assert_eq!(r.rounds, 0);
        assert_eq!(r.winner, Some(OpinionId(0)));
    }

    #[test]
    fn budget_formula() {
        // 50 * (1 * log2(log2 1e5) + log2(log2 1e5)) + 100
        let ll = 1e5f64.log2().log2();
        assert_eq!(default_round_budget(100_000, 2), (100.0 * ll + 100.0).ceil() as u64);
    }

    #[test]
    fn small_run_is_reproducible() {
        let mut cfg = ExperimentConfig { n: 2000, k: 3, ..Default::default() };
        cfg.generation_cap = Some(3);
        let p = SyncParams::from_config(&cfg).unwrap();
        let a = run_sync(&p, 99).unwrap();
        let b = run_sync(&p, 99).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert!(a.snapshots.iter().all(|s| s.total() == 2000));
    }

    fn arb_world() -> impl Strategy<Value = (SyncWorld, Vec<(u32, u32)>, Vec<usize>)> {
        (2usize..24).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u32..3, 0u32..4), n),
                proptest::collection::vec((0..n as u32, 0..n as u32), n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                0u64..6,
            )
                .prop_map(move |(nodes, samples, perm, round)| {
                    let mut w = SyncWorld::new(
                        nodes.iter().map(|&(o, _)| OpinionId(o)).collect(),
                        vec![1, 3, 5],
                        4,
                    );
                    w.gens = nodes.iter().map(|&(_, x)| Generation(x)).collect();
                    w.round = round;
                    (w, samples, perm)
                })
        })
    }

    proptest! {
        #[test]
        fn step_invariants((world, samples, perm) in arb_world()) {
            let before = world.clone();
            let mut after = world.clone();
            sync_step_with_samples(&mut after, &samples);
            for (v, &(a, b)) in samples.iter().enumerate() {
                let (o, g) = after.view(v);
                prop_assert!(g >= before.gens[v]);
                prop_assert!(g.0 <= 4 || g == before.gens[v]);
                let sa = before.view(a as usize);
                let sb = before.view(b as usize);
                let unchanged = (o, g) == before.view(v);
                let copied = (o, g) == sa || (o, g) == sb;
                let promoted = (o == sa.0 && g == sa.1.next()) || (o == sb.0 && g == sb.1.next());
                prop_assert!(unchanged || copied || promoted);
            }

            // Processing nodes in another order gives the same next state.
            let scheduled = before.next_round_scheduled();
            let mut ops = before.opinions.clone();
            let mut gens = before.gens.clone();
            for &v in &perm {
                let (a, b) = samples[v];
                let (o, g) = sync_rule(before.view(v), before.view(a as usize), before.view(b as usize), scheduled, 4);
                ops[v] = o;
                gens[v] = g;
            }
            prop_assert_eq!(ops, after.opinions);
            prop_assert_eq!(gens, after.gens);
        }
    }
}
