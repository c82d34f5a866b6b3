//! Derived protocol parameters.
//!
//! These are the closed-form quantities that drive the synchronous schedule and
//! bound the number of generations: the expected life-cycle length of a
//! generation, the rounds at which two-choices promotions are allowed, the
//! generation cap, and the lower bound on the same-color probability.
//!
//! Logarithms follow one convention throughout: `log` is base 2 and `ln` is
//! natural.

use crate::error::{Error, Result};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

/// `ln(e^x + c) - x`, evaluated without forming `e^x`.
#[inline]
fn log_excess(x: f64, c: f64) -> f64 {
    (c * (-x).exp()).ln_1p()
}

/// Life-cycle length `X_i` of generation `i >= 1`:
///
/// ```text
/// X_i = (2 ln(a^(2^(i-1)) + k - 1) - ln(a^(2^i) + k - 1) - ln γ) / ln(2 - γ) + 2
/// ```
///
/// With `L = 2^i ln a`, the numerator's log terms equal `2h(L/2) - h(L)` where
/// `h(x) = ln(1 + (k-1) e^-x)`, so the powers of `a` are never materialized and
/// late generations cannot overflow. As `i` grows the value tends to
/// `-ln γ / ln(2 - γ) + 2`.
pub fn generation_lifetime(i: u32, alpha0: f64, k: u32, gamma: f64) -> Result<f64> {
    if i == 0 {
        return Err(Error::param("i", "generation index must be at least 1"));
    }
    if !(alpha0 >= 1.0) || !alpha0.is_finite() {
        return Err(Error::param("alpha0", format!("must be >= 1, got {alpha0}")));
    }
    if k == 0 {
        return Err(Error::param("k", "must be positive"));
    }
    check_gamma(gamma)?;

    let ln_a = alpha0.ln();
    let l = if ln_a == 0.0 { 0.0 } else { f64::from(i).exp2() * ln_a };
    let c = f64::from(k - 1);
    let logs = 2.0 * log_excess(l / 2.0, c) - log_excess(l, c);
    Ok((logs - gamma.ln()) / (2.0 - gamma).ln() + 2.0)
}

/// Rounds `t_1..t_G` at which two-choices promotions are allowed.
///
/// `t_i = ceil(sum_{j<i} X_j) + 1`, taking `X_0 = X_1`.
pub fn generation_schedule(alpha0: f64, k: u32, gamma: f64, cap: u32) -> Result<Vec<u64>> {
    if cap == 0 {
        return Err(Error::param("generation_cap", "must be at least 1"));
    }
    let mut schedule = Vec::with_capacity(cap as usize);
    let mut total = generation_lifetime(1, alpha0, k, gamma)?;
    schedule.push(total.ceil() as u64 + 1);
    for i in 1..cap {
        total += generation_lifetime(i, alpha0, k, gamma)?;
        schedule.push(total.ceil() as u64 + 1);
    }
    Ok(schedule)
}

/// Default number of generations, `floor(log(log n / (a - 1)))`, at least 1.
pub fn generation_cap(n: u64, alpha0: f64) -> Result<u32> {
    if !(alpha0 > 1.0) {
        return Err(Error::param(
            "alpha0",
            format!("generation cap needs alpha0 > 1, got {alpha0}"),
        ));
    }
    let value = ((n as f64).log2() / (alpha0 - 1.0)).log2().floor();
    Ok(if value.is_finite() && value >= 1.0 { value as u32 } else { 1 })
}

/// Generation cap of the single-leader protocol: the synchronous cap plus the
/// `ceil(1 / (1/2 - log_n k))` extra generations needed once the bias exceeds `k`.
pub fn single_leader_gen_cap(n: u64, alpha0: f64, k: u32) -> Result<u32> {
    let base = generation_cap(n, alpha0)?;
    let log_n_k = if k <= 1 { 0.0 } else { f64::from(k).ln() / (n as f64).ln() };
    let slack = 0.5 - log_n_k;
    if !(slack > 0.0) {
        return Err(Error::param("k", format!("needs k < sqrt(n), got k={k}, n={n}")));
    }
    Ok(base + (1.0 / slack).ceil() as u32)
}

/// Generation cap of the multi-leader protocol, `ceil(log log_a n)`, at least 1.
pub fn multi_leader_gen_cap(n: u64, alpha0: f64) -> Result<u32> {
    if !(alpha0 > 1.0) {
        return Err(Error::param(
            "alpha0",
            format!("generation cap needs alpha0 > 1, got {alpha0}"),
        ));
    }
    let log_alpha_n = (n as f64).ln() / alpha0.ln();
    let value = log_alpha_n.log2().ceil();
    Ok(if value.is_finite() && value >= 1.0 { value as u32 } else { 1 })
}

/// Lower bound `(a^2 + k - 1) / (a + k - 1)^2` on the probability that two
/// nodes of one generation share a color when the generation has bias `a`.
pub fn p_lower_bound(alpha: f64, k: u32) -> f64 {
    let km1 = f64::from(k) - 1.0;
    (alpha * alpha + km1) / ((alpha + km1) * (alpha + km1))
}
