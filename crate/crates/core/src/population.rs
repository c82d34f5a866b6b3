//! Initial opinion assignment.

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::types::OpinionId;

/// Per-opinion counts of the initial configuration.
///
/// Opinion 0 gets `ceil(n * a / (a + k - 1))` nodes and the rest is split as
/// evenly as possible over opinions `1..k`, lower ids taking the remainders.
/// With `k == 1` every node holds opinion 0.
pub fn initial_counts(n: u64, k: u32, alpha0: f64) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::param("k", "must be positive"));
    }
    if !(alpha0 >= 1.0) || !alpha0.is_finite() {
        return Err(Error::param("alpha0", format!("must be >= 1, got {alpha0}")));
    }
    if n < u64::from(k) {
        return Err(Error::param("n", format!("n = {n} is smaller than k = {k}")));
    }
    if k == 1 {
        return Ok(vec![n]);
    }
    let share = n as f64 * alpha0 / (alpha0 + f64::from(k) - 1.0);
    // Guard against values like 40.000000000000004 rounding up to 41.
    let dominant = ((share - 1e-9).ceil() as u64).clamp(1, n - u64::from(k - 1));
    let rest = n - dominant;
    let minorities = u64::from(k - 1);
    let (base, extra) = (rest / minorities, rest % minorities);
    let mut counts = Vec::with_capacity(k as usize);
    counts.push(dominant);
    for j in 0..minorities {
        counts.push(base + u64::from(j < extra));
    }
    Ok(counts)
}

/// Opinion of every node, shuffled with `rng`.
pub fn assign_initial_opinions(
    n: u64,
    k: u32,
    alpha0: f64,
    rng: &mut SimRng,
) -> Result<Vec<OpinionId>> {
    let counts = initial_counts(n, k, alpha0)?;
    let mut opinions = Vec::with_capacity(n as usize);
    for (j, &c) in counts.iter().enumerate() {
        opinions.extend(std::iter::repeat_n(OpinionId(j as u32), c as usize));
    }
    rng.shuffle(&mut opinions);
    Ok(opinions)
}

/// Opinion holding the most nodes, lowest id on ties. `None` for an empty slice.
pub fn plurality(counts: &[u64]) -> Option<OpinionId> {
    let mut best: Option<(usize, u64)> = None;
    for (j, &c) in counts.iter().enumerate() {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((j, c));
        }
    }
    best.map(|(j, _)| OpinionId(j as u32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn documented_splits() {
        assert_eq!(initial_counts(100, 2, 1.0).unwrap(), vec![50, 50]);
        assert_eq!(initial_counts(100, 4, 2.0).unwrap(), vec![40, 20, 20, 20]);
        assert_eq!(initial_counts(10, 3, 1.5).unwrap(), vec![5, 3, 2]);
        assert_eq!(initial_counts(7, 1, 1.0).unwrap(), vec![7]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(initial_counts(100, 2, 0.9).is_err());
        assert!(initial_counts(2, 3, 1.5).is_err());
    }

    #[test]
    fn shuffled_assignment_keeps_counts() {
        let mut rng = seeded_rng(11, 0);
        let ops = assign_initial_opinions(1000, 3, 1.5, &mut rng).unwrap();
        let mut counts = [0u64; 3];
        for o in &ops {
            counts[o.index()] += 1;
        }
        assert_eq!(counts.to_vec(), initial_counts(1000, 3, 1.5).unwrap());
        // Not left in block order.
        assert!(ops[..counts[0] as usize].iter().any(|o| o.0 != 0));
    }

    #[test]
    fn plurality_picks_largest() {
        assert_eq!(plurality(&[3, 9, 9]), Some(OpinionId(1)));
        assert_eq!(plurality(&[]), None);
    }

    proptest! {
        #[test]
        fn counts_sum_and_dominate(n in 2u64..100_000, k in 2u32..20, alpha in 1.0f64..10.0) {
            prop_assume!(n >= u64::from(k));
            let c = initial_counts(n, k, alpha).unwrap();
            prop_assert_eq!(c.iter().sum::<u64>(), n);
            prop_assert!(c[1..].iter().all(|&m| m <= c[0]));
        }
    }
}
