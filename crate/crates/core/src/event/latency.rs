use rand_distr::{Distribution, Gamma};

use crate::rng::SimRng;

/// Two random nodes in parallel, then the leader.
pub const SINGLE_LEADER: [usize; 2] = [2, 1];
/// Three random nodes in parallel, then two leaders in parallel.
pub const MULTI_LEADER: [usize; 2] = [3, 2];
/// Three random nodes in parallel, then the discovered leader.
pub const CLUSTER_JOIN: [usize; 2] = [3, 1];

/// Exponential channel-establishment latency with rate `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub lambda: f64,
}

impl LatencyModel {
    pub fn new(lambda: f64) -> Self {
        assert!(lambda > 0.0, "latency rate must be positive");
        LatencyModel { lambda }
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        if self.lambda.is_infinite() {
            0.0
        } else {
            rng.exponential(self.lambda)
        }
    }

    /// Sum over stages of the slowest channel in each stage.
    pub fn composite(&self, stages: &[usize], rng: &mut SimRng) -> f64 {
        stages
            .iter()
            .map(|&s| (0..s).map(|_| self.sample(rng)).fold(0.0, f64::max))
            .sum()
    }
}

/// How the channel phase of a step is modelled when calibrating the time unit.
#[derive(Debug, Clone, PartialEq)]
pub enum Composition {
    /// Exact staged latencies as used by the engines.
    Stages(Vec<usize>),
    /// Whole step replaced by a `Gamma(7, min(1, lambda))` variate.
    Majorizing,
}

/// Length of a time unit: the 0.9-quantile of one full step, that is two
/// channel phases around a clock gap (`T2' + T1 + T2'`).
pub fn calibrate_time_unit(
    lambda: f64,
    composition: &Composition,
    samples: usize,
    rng: &mut SimRng,
) -> f64 {
    assert!(samples > 0);
    let model = LatencyModel::new(lambda);
    let mut draws: Vec<f64> = match composition {
        Composition::Stages(stages) => (0..samples)
            .map(|_| {
                let first = model.composite(stages, rng);
                let gap = rng.exponential(1.0);
                first + gap + model.composite(stages, rng)
            })
            .collect(),
        Composition::Majorizing => {
            let beta = lambda.min(1.0);
            let gamma = Gamma::new(7.0, 1.0 / beta).expect("valid gamma parameters");
            (0..samples).map(|_| gamma.sample(rng.inner_mut())).collect()
        }
    };
    let idx = ((0.9 * samples as f64).ceil() as usize).clamp(1, samples) - 1;
    let (_, q, _) = draws.select_nth_unstable_by(idx, f64::total_cmp);
    *q
}

/// Closed-form upper bound on the time unit, `10 / (3 min(1, lambda))`.
pub fn time_unit_bound(lambda: f64) -> f64 {
    10.0 / (3.0 * lambda.min(1.0))
}
