use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_stat: f64,
    /// `n` for one sample, `n m / (n + m)` for two.
    pub n_eff: f64,
    pub p_value: f64,
}

impl KsResult {
    fn new(d_stat: f64, n_eff: f64) -> Self {
        let root = n_eff.sqrt();
        // Stephens' finite-sample correction
        let lambda = (root + 0.12 + 0.11 / root) * d_stat;
        KsResult { d_stat, n_eff, p_value: kolmogorov_survival(lambda) }
    }
}

/// P(K > lambda) for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        // the alternating series converges slowly here; use the dual form
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let sum: f64 = (1..=20)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (-odd * odd * c).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(invalid("sample contains NaN"));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF. Infinite
/// samples are allowed; the CDF is taken as 0 at -inf and 1 at +inf.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let v = sorted(samples)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = if x == f64::INFINITY {
            1.0
        } else if x == f64::NEG_INFINITY {
            0.0
        } else {
            cdf(x)
        };
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult::new(d.clamp(0.0, 1.0), n))
}

/// Two-sample Kolmogorov-Smirnov test. Ties are handled by stepping past all
/// equal values before comparing the empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult::new(d, na * nb / (na + nb)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn kolmogorov_reference_values() {
        // standard table: P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 2e-4);
        // both series agree where they meet
        let below = kolmogorov_survival(1.0 - 1e-12);
        let above = kolmogorov_survival(1.0);
        assert!((below - above).abs() < 1e-9);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(10.0) < 1e-80);
    }

    #[test]
    fn identical_samples_have_zero_distance() {
        let a = [3.0, 1.0, 2.0, 2.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.d_stat, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn two_sample_by_hand() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0]).unwrap();
        assert_eq!(r.d_stat, 1.0);
        let r = ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        assert_eq!(r.d_stat, 0.5);
        assert!((r.n_eff - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_sample_by_hand() {
        let r = ks_one_sample(&[0.5], |x| x).unwrap();
        assert_eq!(r.d_stat, 0.5);
        let r = ks_one_sample(&[f64::INFINITY, 0.25], |x| x.clamp(0.0, 1.0)).unwrap();
        assert_eq!(r.d_stat, 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(ks_one_sample(&[], |x| x), Err(Error::EmptySample)));
        assert!(matches!(ks_two_sample(&[1.0], &[]), Err(Error::EmptySample)));
        assert!(ks_two_sample(&[f64::NAN], &[1.0]).is_err());
    }

    fn exponential(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect()
    }

    #[test]
    fn null_samples_stay_below_the_one_percent_critical_value() {
        let mut rng = stream(11, &[]);
        let n = 10_000;
        let x = exponential(&mut rng, n);
        let r = ks_one_sample(&x, |t| 1.0 - (-t).exp()).unwrap();
        assert!(r.d_stat < 1.63 / (n as f64).sqrt(), "{r:?}");
    }

    #[test]
    fn iqr_shift_is_detected() {
        let mut rng = stream(12, &[]);
        let n = 10_000;
        let a = exponential(&mut rng, n);
        let iqr = 4.0f64.ln() - (4.0f64 / 3.0).ln();
        let b: Vec<f64> = exponential(&mut rng, n).into_iter().map(|x| x + iqr).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value < 1e-6);
        assert!(ks_one_sample(&b, |t| 1.0 - (-t.max(0.0)).exp()).unwrap().p_value < 1e-6);
    }

    #[test]
    fn null_p_values_are_uniform() {
        let mut rng = stream(13, &[]);
        let p: Vec<f64> = (0..200)
            .map(|_| {
                let a = exponential(&mut rng, 500);
                ks_one_sample(&a, |t| 1.0 - (-t).exp()).unwrap().p_value
            })
            .collect();
        let r = ks_one_sample(&p, |u| u.clamp(0.0, 1.0)).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
        let rejected = p.iter().filter(|&&x| x < 0.05).count();
        // nominal 10 of 200; allow binomial noise
        assert!(rejected <= 20, "{rejected}");
    }
}
