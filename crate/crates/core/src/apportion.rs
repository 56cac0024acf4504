use crate::error::{Error, Result};

/// Largest-remainder apportionment of `total` units over `weights`.
///
/// Shares are `total * w / sum(w)` rounded down, with leftover units handed to
/// the largest fractional remainders (lowest index on ties).
pub fn largest_remainder(total: usize, weights: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| w.is_nan() || *w < 0.0 || !w.is_finite()) || sum.is_nan() || sum <= 0.0 {
        return Err(Error::invalid(format!("weights {weights:?} must be finite, non-negative, non-zero")));
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}
