//! Reproducible summation and batch-means error bars.
//!
//! Estimators in this crate reduce over large, possibly autocorrelated sample
//! sets. Sums are accumulated blockwise and merged pairwise so the result is
//! independent of chunking decisions and reproducible to roundoff, and
//! standard errors use batch means, which stay valid on correlated
//! time-series input where the i.i.d. formula does not.

/// Number of batches used for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 32;

const BLOCK: usize = 4096;

/// Pairwise (cascade) summation. Error grows like O(log n) instead of O(n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Streaming accumulator with pairwise merging of fixed-size block sums.
///
/// Feeding the same values in the same order always reproduces the same
/// floating-point result, independent of how callers drive the iteration.
#[derive(Debug, Clone, Default)]
pub struct PairwiseAccumulator {
    block: Vec<f64>,
    block_sums: Vec<f64>,
    count: usize,
}

impl PairwiseAccumulator {
    pub fn new() -> Self {
        Self {
            block: Vec::with_capacity(BLOCK),
            block_sums: Vec::new(),
            count: 0,
        }
    }

    pub fn add(&mut self, v: f64) {
        self.block.push(v);
        self.count += 1;
        if self.block.len() == BLOCK {
            self.block_sums.push(pairwise_sum(&self.block));
            self.block.clear();
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> f64 {
        let tail = pairwise_sum(&self.block);
        pairwise_sum(&self.block_sums) + tail
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum() / self.count as f64
        }
    }
}

/// Mean and batch-means standard error of a scalar series.
///
/// The series is split into `n_batches` contiguous batches; the standard
/// error is the sample standard deviation of the batch means divided by
/// sqrt(n_batches). For fewer samples than `2 * n_batches` the batch count
/// shrinks so every batch holds at least two points.
pub fn mean_and_batch_se(values: &[f64], n_batches: usize) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    if n == 1 {
        return (values[0], 0.0);
    }
    let b = n_batches.max(2).min(n / 2).max(1);
    let mean = pairwise_sum(values) / n as f64;
    if b < 2 {
        // Too few points for batching; fall back to the i.i.d. formula.
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        return (mean, (var / n as f64).sqrt());
    }
    let batch_len = n / b;
    let used = batch_len * b;
    let mut batch_means = Vec::with_capacity(b);
    for k in 0..b {
        let chunk = &values[k * batch_len..(k + 1) * batch_len];
        batch_means.push(pairwise_sum(chunk) / batch_len as f64);
    }
    let grand = pairwise_sum(&batch_means) / b as f64;
    let var_b = batch_means
        .iter()
        .map(|m| (m - grand).powi(2))
        .sum::<f64>()
        / (b - 1) as f64;
    // Recenter on the full-sample mean (drops the truncated tail only from the SE).
    let _ = used;
    (mean, (var_b / b as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-9);
    }

    #[test]
    fn accumulator_agrees_with_pairwise() {
        let v: Vec<f64> = (0..10_000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut acc = PairwiseAccumulator::new();
        for &x in &v {
            acc.add(x);
        }
        assert_eq!(acc.count(), v.len());
        assert!((acc.sum() - pairwise_sum(&v)).abs() < 1e-8);
    }

    #[test]
    fn batch_se_of_constant_series_is_zero() {
        let v = vec![2.5; 640];
        let (m, se) = mean_and_batch_se(&v, 32);
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn batch_se_scales_like_inverse_sqrt_n() {
        // White noise: SE should be ~ sigma / sqrt(n).
        let mut state = 1u64;
        let mut next = || {
            // xorshift, uniform in [-0.5, 0.5)
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let v: Vec<f64> = (0..32_000).map(|_| next()).collect();
        let (_, se) = mean_and_batch_se(&v, 32);
        let sigma = (1.0f64 / 12.0).sqrt();
        let expected = sigma / (v.len() as f64).sqrt();
        assert!(se > 0.3 * expected && se < 3.0 * expected, "se={se}, expected~{expected}");
    }
}
