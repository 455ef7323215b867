//! Small order-statistic helpers.

use crate::error::{BakrError, Result};

/// Inverse-CDF (type 1) quantile: the smallest value whose empirical CDF
/// reaches `prob`. `values` need not be sorted.
pub fn quantile_inverse_cdf(values: &[f64], prob: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(BakrError::InvalidArgument("quantile of empty set".into()));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(BakrError::InvalidArgument(format!(
            "quantile level {prob} outside [0,1]"
        )));
    }
    let mut sorted = values.to_vec();
    let rank = inverse_cdf_rank(sorted.len(), prob);
    let (_, v, _) = sorted.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*v)
}

/// 1-based rank used by [`quantile_inverse_cdf`] for `n` values.
pub(crate) fn inverse_cdf_rank(n: usize, prob: f64) -> usize {
    let raw = prob * n as f64;
    // absorb rounding in products like 0.95 * 100
    let rank = (raw - 1e-9 * n as f64).ceil() as usize;
    rank.clamp(1, n)
}

/// Linear-interpolation (type 7) quantile of an already sorted slice.
pub fn quantile_sorted_linear(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}
