//! Population snapshots and the statistics derived from them.
//!
//! For a generation `i` at time `t`:
//! `g` is the fraction of all nodes in generation `i`, `c[j]` the fraction of
//! generation `i` holding opinion `j`, `alpha` the ratio of the two largest
//! `c[j]`, and `p = sum_j c[j]^2`.

use serde::Serialize;

use crate::types::{Generation, OpinionId};

/// Exact per-(generation, opinion) counts at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSnapshot {
    /// Round index (synchronous) or simulated time in time steps.
    pub time: f64,
    pub k: u32,
    /// `counts[g][j]`: nodes of generation `g` with opinion `j`.
    pub counts: Vec<Vec<u64>>,
}

impl PopulationSnapshot {
    pub fn from_nodes(time: f64, k: u32, opinions: &[OpinionId], gens: &[Generation]) -> Self {
        debug_assert_eq!(opinions.len(), gens.len());
        let mut counts: Vec<Vec<u64>> = Vec::new();
        for (o, g) in opinions.iter().zip(gens) {
            if g.index() >= counts.len() {
                counts.resize_with(g.index() + 1, || vec![0; k as usize]);
            }
            counts[g.index()][o.index()] += 1;
        }
        PopulationSnapshot { time, k, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn generation_count(&self, g: usize) -> u64 {
        self.counts.get(g).map_or(0, |row| row.iter().sum())
    }

    /// Highest generation with at least one node.
    pub fn top_generation(&self) -> Option<usize> {
        (0..self.counts.len()).rev().find(|&g| self.generation_count(g) > 0)
    }

    /// Nodes per opinion, summed over generations.
    pub fn opinion_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.k as usize];
        for row in &self.counts {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        totals
    }

    pub fn is_monochromatic(&self) -> bool {
        self.opinion_totals().iter().filter(|&&c| c > 0).count() <= 1
    }
}

/// Statistics of one non-empty generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: u32,
    pub g: f64,
    pub c: Vec<f64>,
    /// `f64::INFINITY` when only one opinion is present.
    pub alpha: f64,
    pub p: f64,
    pub dominant: OpinionId,
}

/// Per-generation statistics. Empty generations map to `None`.
pub fn derive_stats(snapshot: &PopulationSnapshot) -> Vec<Option<GenerationStats>> {
    let n = snapshot.total() as f64;
    snapshot
        .counts
        .iter()
        .enumerate()
        .map(|(gen, row)| {
            let size: u64 = row.iter().sum();
            if size == 0 {
                return None;
            }
            let c: Vec<f64> = row.iter().map(|&x| x as f64 / size as f64).collect();
            let p = c.iter().map(|x| x * x).sum();
            let (mut first, mut second) = (0usize, None::<usize>);
            for j in 1..row.len() {
                if row[j] > row[first] {
                    second = Some(first);
                    first = j;
                } else if second.is_none_or(|s| row[j] > row[s]) {
                    second = Some(j);
                }
            }
            let second_count = second.map_or(0, |s| row[s]);
            let alpha = if second_count == 0 {
                f64::INFINITY
            } else {
                row[first] as f64 / second_count as f64
            };
            Some(GenerationStats {
                generation: gen as u32,
                g: size as f64 / n,
                c,
                alpha,
                p,
                dominant: OpinionId(first as u32),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    None,
    EpsConverged,
    FullConsensus,
    WrongWinner,
}

/// Classifies per-opinion totals against `(1 - epsilon) n`.
pub fn detect_convergence(totals: &[u64], epsilon: f64, plurality: OpinionId) -> Convergence {
    let n: u64 = totals.iter().sum();
    let need = (1.0 - epsilon) * n as f64;
    for (j, &c) in totals.iter().enumerate() {
        if c as f64 >= need && c > 0 {
            if j != plurality.index() {
                return Convergence::WrongWinner;
            }
            return if c == n {
                Convergence::FullConsensus
            } else {
                Convergence::EpsConverged
            };
        }
    }
    Convergence::None
}

/// One generation's bias at the two instants the analysis cares about.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationPoint {
    pub generation: u32,
    pub birth_time: f64,
    pub alpha_at_birth: f64,
    /// Bias just before the next generation is born (or at the propagation
    /// switch in the asynchronous engines).
    pub alpha_at_prop: f64,
    /// Largest opinion fraction within the generation at `alpha_at_prop`.
    pub dominant_fraction: f64,
}

/// Timeline for the asynchronous engines from `(generation, time, alpha,
/// dominant fraction)` marks, prefixed by generation 0 at time 0.
pub fn async_timeline(initial: &[u64], marks: impl IntoIterator<Item = (u32, f64, f64, f64)>) -> Vec<GenerationPoint> {
    let mut out = Vec::new();
    let snap = PopulationSnapshot { time: 0.0, k: initial.len() as u32, counts: vec![initial.to_vec()] };
    if let Some(Some(st)) = derive_stats(&snap).first() {
        let dom = st.c.iter().cloned().fold(0.0, f64::max);
        out.push(GenerationPoint {
            generation: 0,
            birth_time: 0.0,
            alpha_at_birth: st.alpha,
            alpha_at_prop: st.alpha,
            dominant_fraction: dom,
        });
    }
    for (generation, time, alpha, dom) in marks {
        out.push(GenerationPoint {
            generation,
            birth_time: time,
            alpha_at_birth: alpha,
            alpha_at_prop: alpha,
            dominant_fraction: dom,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub generation: u32,
    pub birth_time: f64,
    pub alpha_at_birth: f64,
    pub alpha_at_prop: f64,
    /// Square of the previous generation's bias at its birth.
    pub predicted_square: f64,
    /// `alpha_at_birth / predicted_square - 1`; `None` past the threshold.
    pub relative_gap: Option<f64>,
    /// Previous generation already had bias above `k` (or was monochromatic).
    pub past_threshold: bool,
    /// Past the threshold: dominant fraction did not shrink.
    pub dominant_growth_ok: Option<bool>,
}

/// Compares each generation's bias at birth with the square of its
/// predecessor's. Pairs whose predecessor has bias above `k` are checked for
/// non-decreasing dominant fraction instead.
pub fn bias_squaring_report(timeline: &[GenerationPoint], k: u32) -> Vec<BiasReport> {
    timeline
        .windows(2)
        .map(|w| {
            let (prev, cur) = (&w[0], &w[1]);
            let a = prev.alpha_at_birth;
            let past = !a.is_finite() || a > f64::from(k);
            let predicted = a * a;
            BiasReport {
                generation: cur.generation,
                birth_time: cur.birth_time,
                alpha_at_birth: cur.alpha_at_birth,
                alpha_at_prop: cur.alpha_at_prop,
                predicted_square: predicted,
                relative_gap: (!past).then(|| cur.alpha_at_birth / predicted - 1.0),
                past_threshold: past,
                dominant_growth_ok: past.then_some(cur.dominant_fraction >= prev.dominant_fraction - 1e-12),
            }
        })
        .collect()
}
