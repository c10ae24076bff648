use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub alpha_hat: f64,
    pub k_used: usize,
    /// Normal-approximation 95% band, `alpha_hat (1 -+ 1.96 / sqrt(k))`.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl TailEstimate {
    pub fn covers(&self, alpha: f64) -> bool {
        self.ci_low <= alpha && alpha <= self.ci_high
    }
}

/// `ceil(n^0.6)`, kept inside the valid range `[2, n - 1]`.
pub fn default_k(n: usize) -> usize {
    ((n as f64).powf(0.6).ceil() as usize).clamp(2, n.saturating_sub(1).max(2))
}

/// Hill estimator of the tail index from the `k` largest order statistics:
/// `k / sum_{i <= k} ln(X_(i) / X_(k+1))`.
pub fn hill_estimator(samples: &[f64], k: usize) -> Result<TailEstimate> {
    if k < 2 || k >= samples.len() {
        return Err(Error::TooFewSamples(format!("need 2 <= k < n, got k = {k}, n = {}", samples.len())));
    }
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, &x)| !(x > 0.0 && x.is_finite())) {
        return Err(Error::NonPositiveSample { index, value });
    }
    let mut v = samples.to_vec();
    // descending: the k + 1 largest end up in v[..=k]
    v.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    let threshold = v[k];
    let sum: f64 = v[..k].iter().map(|x| (x / threshold).ln()).sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateTail);
    }
    let alpha_hat = k as f64 / sum;
    let half = 1.96 / (k as f64).sqrt();
    Ok(TailEstimate { alpha_hat, k_used: k, ci_low: alpha_hat * (1.0 - half), ci_high: alpha_hat * (1.0 + half) })
}

/// Estimates at `k/2`, `k` and `2k` for `k = default_k(n)`, skipping values
/// outside the valid range.
pub fn hill_sweep(samples: &[f64]) -> Result<Vec<TailEstimate>> {
    let k = default_k(samples.len());
    let mut out = Vec::new();
    for kk in [k / 2, k, 2 * k] {
        if kk >= 2 && kk < samples.len() {
            out.push(hill_estimator(samples, kk)?);
        }
    }
    if out.is_empty() {
        return Err(Error::TooFewSamples(format!("{} samples", samples.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, &[]);
        (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha)).collect()
    }

    #[test]
    fn recovers_pareto_half() {
        let x = pareto(0.5, 10_000, 1);
        let est = hill_estimator(&x, 500).unwrap();
        assert!((0.45..=0.55).contains(&est.alpha_hat), "{est:?}");
        assert!(est.ci_low <= est.alpha_hat && est.alpha_hat <= est.ci_high);
    }

    #[test]
    fn exact_on_two_point_tail() {
        // X_(1) = e, X_(2) = 1 = X_(3): sum of logs is 1 + 0, alpha = 2
        let est = hill_estimator(&[1.0, std::f64::consts::E, 1.0], 2).unwrap();
        assert!((est.alpha_hat - 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(hill_estimator(&[2.0; 10], 3), Err(Error::DegenerateTail)));
        assert!(matches!(hill_estimator(&[1.0, 2.0], 2), Err(Error::TooFewSamples(_))));
        assert!(matches!(hill_estimator(&[1.0, 2.0, 3.0], 1), Err(Error::TooFewSamples(_))));
        assert!(matches!(hill_estimator(&[1.0, -2.0, 3.0, 4.0], 2), Err(Error::NonPositiveSample { index: 1, .. })));
    }

    #[test]
    fn default_k_and_sweep() {
        assert_eq!(default_k(20_000), 381);
        assert_eq!(default_k(3), 2);
        let sweep = hill_sweep(&pareto(0.5, 2000, 2)).unwrap();
        assert_eq!(sweep.iter().map(|e| e.k_used).collect::<Vec<_>>(), vec![48, 96, 192]);
    }

    #[test]
    fn ci_coverage_on_synthetic_stable_tails() {
        for (alpha, seed) in [(0.5, 10), (2.0 / 3.0, 20)] {
            let hits = (0..200)
                .filter(|&r| {
                    let x = pareto(alpha, 5000, seed + r);
                    hill_estimator(&x, default_k(x.len())).unwrap().covers(alpha)
                })
                .count();
            assert!(hits >= 180, "alpha {alpha}: {hits}/200");
        }
    }
}
