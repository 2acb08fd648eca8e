//! Wilcoxon signed-rank test: zero differences discarded, average ranks for
//! ties, exact two-sided p by sign-assignment counting for small n, and a
//! tie-corrected normal approximation with continuity correction otherwise.

use crate::error::{Error, Result};

/// Dispatch boundary: at or below this effective n the exact distribution is
/// enumerated.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone)]
pub struct WilcoxonResult {
    /// min(W+, W-).
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
}

/// Average ranks of |values|, ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Signed-rank statistics of the paired difference a - b.
fn signed_ranks(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "wilcoxon_signed_rank",
            format!("two equal-length series (>= 1), lhs {}", a.len()),
            format!("{}", b.len()),
        ));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::UndefinedTest(
            "all paired differences are zero".into(),
        ));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let positive: Vec<bool> = diffs.iter().map(|d| *d > 0.0).collect();
    Ok((ranks, positive))
}

/// Exact two-sided p via the sign-assignment distribution of W+. Ranks are
/// doubled to integers (average ranks are half-integer), and the counting
/// runs as a subset-sum table rather than 2^n enumeration.
pub fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let scaled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = scaled.iter().sum();
    // counts[s] = number of sign assignments with doubled W+ equal to s.
    let mut counts = vec![0u128; total + 1];
    counts[0] = 1;
    for &r in &scaled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let target = (w_plus * 2.0).round() as usize;
    let all: u128 = 1u128 << n;
    let le: u128 = counts[..=target].iter().sum();
    let ge: u128 = counts[target..].iter().sum();
    let tail = le.min(ge);
    let p = 2.0 * tail as f64 / all as f64;
    p.min(1.0)
}

/// Brute-force oracle: enumerate all 2^n sign assignments.
pub fn exact_p_enumeration(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    assert!(n <= 20, "enumeration oracle is exponential");
    let target = (w_plus * 2.0).round() as i64;
    let scaled: Vec<i64> = ranks.iter().map(|r| (r * 2.0).round() as i64).collect();
    let mut le = 0u64;
    let mut ge = 0u64;
    for mask in 0u64..(1u64 << n) {
        let mut s = 0i64;
        for (i, &r) in scaled.iter().enumerate() {
            if mask >> i & 1 == 1 {
                s += r;
            }
        }
        if s <= target {
            le += 1;
        }
        if s >= target {
            ge += 1;
        }
    }
    let tail = le.min(ge) as f64;
    (2.0 * tail / (1u64 << n) as f64).min(1.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal approximation with tie-corrected variance and continuity
/// correction, on the min statistic.
pub fn approx_p(ranks: &[f64], w_min: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // Tie correction: group the (doubled) ranks.
    let mut sorted: Vec<i64> = ranks.iter().map(|r| (r * 2.0).round() as i64).collect();
    sorted.sort_unstable();
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let d = w_min - mean;
    let z = (d + 0.5 * if d < 0.0 { 1.0 } else { -1.0 }) / var.sqrt();
    (2.0 * normal_cdf(-z.abs())).min(1.0)
}

/// Two-sided paired signed-rank test. Zero differences are discarded; an
/// all-zero difference vector is an explicit undefined-test error.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let (ranks, positive) = signed_ranks(a, b)?;
    let n = ranks.len();
    let w_plus: f64 = ranks
        .iter()
        .zip(&positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let (p_value, method) = if n <= EXACT_LIMIT {
        (exact_p(&ranks, w_plus), WilcoxonMethod::Exact)
    } else {
        (approx_p(&ranks, statistic), WilcoxonMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        w_minus,
        p_value,
        n_effective: n,
        method,
    })
}
