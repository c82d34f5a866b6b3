use plurality::config::{ExperimentConfig, Protocol};
use plurality::oracle::oracle_sync_step_distribution;
use plurality::rng::seeded_rng;
use plurality::sync::{run_sync, sync_step, sync_step_with_samples, SyncParams, SyncWorld};
use plurality::types::{Generation, OpinionId};
use proptest::prelude::*;

fn world(nodes: &[(u32, u32)], round: u64, schedule: Vec<u64>, cap: u32) -> SyncWorld {
    let mut w = SyncWorld::new(nodes.iter().map(|&(o, _)| OpinionId(o)).collect(), schedule, cap);
    w.gens = nodes.iter().map(|&(_, g)| Generation(g)).collect();
    w.round = round;
    w
}

proptest! {
    // Feeding every ordered sample pair to the engine reproduces the oracle
    // exactly, with no Monte Carlo noise.
    #[test]
    fn engine_matches_oracle_exhaustively(
        nodes in prop::collection::vec((0u32..3, 0u32..4), 1..7),
        round in 0u64..4,
        cap in 1u32..4,
    ) {
        let w = world(&nodes, round, vec![1, 2, 4], cap);
        let n = w.len();
        for v in 0..n {
            let exact = oracle_sync_step_distribution(&w, v).unwrap();
            let mut counted = std::collections::BTreeMap::new();
            for a in 0..n as u32 {
                for b in 0..n as u32 {
                    let mut next = w.clone();
                    sync_step_with_samples(&mut next, &vec![(a, b); n]);
                    *counted.entry(next.view(v)).or_insert(0.0) += 1.0 / (n * n) as f64;
                }
            }
            prop_assert_eq!(exact.len(), counted.len());
            for (key, p) in &exact {
                prop_assert!((counted[key] - p).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn generations_never_decrease_or_pass_the_cap() {
    let ops: Vec<OpinionId> = (0..500).map(|v| OpinionId(v % 3)).collect();
    let mut w = SyncWorld::new(ops, vec![1, 3, 6, 10], 4);
    let mut rng = seeded_rng(3, 0);
    for _ in 0..40 {
        let before = w.gens.clone();
        sync_step(&mut w, &mut rng);
        assert!(w.gens.iter().zip(&before).all(|(a, b)| a >= b));
        assert!(w.gens.iter().all(|g| g.0 <= 4));
    }
}

#[test]
fn unscheduled_round_keeps_generation_zero_population() {
    // Without a scheduled round nobody can leave generation 0.
    let ops: Vec<OpinionId> = (0..200).map(|v| OpinionId(v % 2)).collect();
    let mut w = SyncWorld::new(ops.clone(), vec![5], 2);
    let mut rng = seeded_rng(1, 0);
    for _ in 0..3 {
        sync_step(&mut w, &mut rng);
    }
    assert_eq!(w.opinions, ops);
    assert!(w.gens.iter().all(|g| g.0 == 0));
}

#[test]
fn run_is_deterministic_and_converges() {
    let cfg = ExperimentConfig { protocol: Protocol::Sync, n: 20_000, k: 3, ..Default::default() };
    let p = SyncParams::from_config(&cfg).unwrap();
    let a = run_sync(&p, 77).unwrap();
    let b = run_sync(&p, 77).unwrap();
    assert_eq!(a.rounds, b.rounds);
    assert_eq!(a.snapshots, b.snapshots);
    assert!(a.plurality_won);
    assert!(a.rounds <= p.budget);
}

#[test]
fn single_opinion_stops_immediately() {
    let cfg = ExperimentConfig { protocol: Protocol::Sync, n: 1_000, k: 1, ..Default::default() };
    let r = run_sync(&SyncParams::from_config(&cfg).unwrap(), 1).unwrap();
    assert_eq!(r.rounds, 0);
    assert!(r.plurality_won);
}
