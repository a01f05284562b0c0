use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences for which the null distribution is
/// computed exactly.
pub const EXACT_MAX_N: usize = 12;

/// Midranks (1-based) of `values`, ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Statistic pieces shared by both branches.
struct SignedRanks {
    ranks: Vec<f64>,
    w_plus: f64,
}

fn signed_ranks(x: &[f64], y: &[f64]) -> Result<Option<SignedRanks>> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Dimension("paired samples are empty".into()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Ok(None);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    Ok(Some(SignedRanks { ranks, w_plus }))
}

/// One-sided signed-rank test of H1: `x > y`.
///
/// Zero differences are dropped. Up to [`EXACT_MAX_N`] non-zero pairs the
/// p-value is exact (null distribution over all sign flips of the observed
/// midranks); beyond that a tie-corrected normal approximation is used.
pub fn wilcoxon_one_sided(x: &[f64], y: &[f64]) -> Result<f64> {
    let Some(sr) = signed_ranks(x, y)? else {
        return Ok(1.0);
    };
    let n = sr.ranks.len();
    let p = if n <= EXACT_MAX_N {
        exact_upper_tail(&sr.ranks, sr.w_plus)
    } else {
        normal_upper_tail(&sr.ranks, sr.w_plus)
    };
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0))
}

/// `P(W+ >= w)` by counting sign assignments. Midranks are multiples of 1/2,
/// so doubled ranks are integers and the count is a subset-sum table.
fn exact_upper_tail(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let target = (2.0 * w_plus).round() as usize;
    let tail: f64 = counts[target..].iter().sum();
    tail / 2f64.powi(ranks.len() as i32)
}

fn normal_upper_tail(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    if var <= 0.0 {
        return if w_plus >= mean { 0.5 } else { 1.0 };
    }
    let z = (w_plus - mean) / var.sqrt();
    Normal::new(0.0, 1.0).expect("standard normal").sf(z)
}
