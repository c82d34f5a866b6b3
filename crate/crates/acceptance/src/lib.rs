//! Reporting helpers for the acceptance runs in `tests/acceptance.rs`.

use std::fmt;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: u32,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(id: u32, pass: bool, detail: impl Into<String>) -> Self {
        Verdict { id, pass, detail: detail.into() }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2}: {tag}  {}", self.id, self.detail)
    }
}

/// Fraction of `items` satisfying `pred`; 1 for an empty slice.
pub fn fraction<T>(items: &[T], pred: impl Fn(&T) -> bool) -> f64 {
    if items.is_empty() {
        return 1.0;
    }
    items.iter().filter(|x| pred(x)).count() as f64 / items.len() as f64
}

/// Median of a list of finite values, `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}
