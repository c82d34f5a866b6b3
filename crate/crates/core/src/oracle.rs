//! Exact one-round outcome distribution of the synchronous rule for tiny
//! populations, by enumerating every ordered sample pair.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sync::{NodeView, SyncWorld};
use crate::types::{Generation, OpinionId};

pub const ORACLE_MAX_N: usize = 32;

/// Probability of each `(opinion, generation)` outcome for `node` in the next
/// round of `world`.
///
/// Written independently of [`crate::sync::sync_rule`] so the two can be
/// checked against each other.
pub fn oracle_sync_step_distribution(
    world: &SyncWorld,
    node: usize,
) -> Result<BTreeMap<NodeView, f64>> {
    let n = world.len();
    if n > ORACLE_MAX_N {
        return Err(Error::param("n", format!("oracle supports n <= {ORACLE_MAX_N}, got {n}")));
    }
    if node >= n {
        return Err(Error::param("node", format!("node {node} out of range for n = {n}")));
    }
    let scheduled = world.schedule.contains(&(world.round + 1));
    let own_gen = world.gens[node].0;
    let own_col = world.opinions[node].0;
    let weight = 1.0 / (n * n) as f64;
    let mut out: BTreeMap<NodeView, f64> = BTreeMap::new();
    for first in 0..n {
        for second in 0..n {
            let (g1, c1) = (world.gens[first].0, world.opinions[first].0);
            let (g2, c2) = (world.gens[second].0, world.opinions[second].0);
            // Higher generation first; the draw order decides ties.
            let (gh, ch, gl, cl) = if g2 > g1 { (g2, c2, g1, c1) } else { (g1, c1, g2, c2) };
            let outcome = if scheduled && gh == gl && ch == cl && own_gen <= gh && gh < world.gen_cap {
                (ch, gh + 1)
            } else if gh > own_gen {
                (ch, gh)
            } else {
                (own_col, own_gen)
            };
            *out.entry((OpinionId(outcome.0), Generation(outcome.1))).or_insert(0.0) += weight;
        }
    }
    Ok(out)
}
