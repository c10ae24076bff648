//! The law of the total-area process at a fixed time.
//!
//! The area `theta_s` of the limit is a stable-1/2 subordinator: it equals
//! `tau_s / sigma_nu^2` where `tau_s` is the first time the local time of a
//! standard Brownian motion at 0 exceeds `s`. Since that local time at a
//! fixed time `u` has the law of `|B_u|`,
//!
//! ```text
//! P(tau_s > u) = P(|B_u| < s)   =>   P(theta_s <= t) = erfc(s / sqrt(2 sigma_nu^2 t))
//! ```

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};

fn check(s: f64, sigma_nu_sq: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("time s must be positive, got {s}")));
    }
    if !(sigma_nu_sq > 0.0 && sigma_nu_sq.is_finite()) {
        return Err(invalid(format!("variance must be positive, got {sigma_nu_sq}")));
    }
    Ok(())
}

/// P(theta_s <= t) = 2 (1 - Phi(s / sqrt(sigma_nu^2 t))).
pub fn levy_theta_cdf(s: f64, sigma_nu_sq: f64, t: f64) -> Result<f64> {
    check(s, sigma_nu_sq)?;
    if t.is_nan() {
        return Err(invalid("t is NaN"));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    if t == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(erfc(s / (2.0 * sigma_nu_sq * t).sqrt()))
}

/// Inverse of [`levy_theta_cdf`] in `t`, for `p` in (0, 1).
pub fn levy_theta_quantile(s: f64, sigma_nu_sq: f64, p: f64) -> Result<f64> {
    check(s, sigma_nu_sq)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("probability must lie in (0, 1), got {p}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - p / 2.0);
    Ok(s * s / (sigma_nu_sq * z * z))
}

/// `R_m / m^2`, with `R_m` the time of the `m`-th return to 0 of a simple
/// random walk. Converges in law to `tau_1` (local time counted as visits
/// divided by sqrt(time)), so it cross-checks [`levy_theta_cdf`] at
/// `sigma_nu^2 = 1` without any branching process code.
///
/// `R_m` has the law of `m + T_m`, with `T_m` the first passage time to
/// level `m`. Each unit of `T_m` either steps up (done) or down (two more
/// passages needed), so `T_m` is counted in rounds of `2 Binomial(d, 1/2)`.
pub fn srw_scaled_return_time<R: Rng + ?Sized>(m: u64, rng: &mut R) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m must be positive"));
    }
    let mut pending = m;
    let mut steps = 0u64;
    while pending > 0 {
        steps += pending;
        let down = Binomial::new(pending, 0.5).expect("p = 1/2 is valid").sample(rng);
        pending = 2 * down;
    }
    let mf = m as f64;
    Ok((steps + m) as f64 / (mf * mf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::ks_one_sample;

    #[test]
    fn reference_values() {
        let p = levy_theta_cdf(1.0, 1.0, 1.0).unwrap();
        assert!((p - 0.317_310_507_862_914_1).abs() < 1e-9, "{p}");
        let median = levy_theta_quantile(1.0, 1.0, 0.5).unwrap();
        assert!((median - 2.198).abs() < 1e-3, "{median}");
        assert!((levy_theta_cdf(1.0, 1.0, median).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn is_a_cdf() {
        let mut prev = 0.0;
        for i in 1..2000 {
            let t = 1.01f64.powi(i) * 1e-4;
            let p = levy_theta_cdf(0.7, 2.0, t).unwrap();
            assert!(p >= prev && (0.0..=1.0).contains(&p));
            prev = p;
        }
        assert!(levy_theta_cdf(1.0, 1.0, 1e-9).unwrap() < 1e-12);
        assert!(levy_theta_cdf(1.0, 1.0, 1e12).unwrap() > 1.0 - 1e-6);
        assert_eq!(levy_theta_cdf(1.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(levy_theta_cdf(1.0, 1.0, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn scaling_in_s_and_variance() {
        // theta_s = s^2 theta_1 and theta under sigma^2 = theta / sigma^2
        for t in [0.3, 1.0, 5.0] {
            let a = levy_theta_cdf(0.5, 1.0, t).unwrap();
            let b = levy_theta_cdf(1.0, 1.0, t / 0.25).unwrap();
            assert!((a - b).abs() < 1e-14);
            let c = levy_theta_cdf(1.0, 2.0, t).unwrap();
            let d = levy_theta_cdf(1.0, 1.0, 2.0 * t).unwrap();
            assert!((c - d).abs() < 1e-14);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(levy_theta_cdf(0.0, 1.0, 1.0).is_err());
        assert!(levy_theta_cdf(1.0, -1.0, 1.0).is_err());
        assert!(levy_theta_cdf(1.0, 1.0, f64::NAN).is_err());
        assert!(levy_theta_quantile(1.0, 1.0, 1.0).is_err());
        assert!(srw_scaled_return_time(0, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn agrees_with_random_walk_local_time() {
        let mut rng = stream(21, &[]);
        let x: Vec<f64> = (0..4000).map(|_| srw_scaled_return_time(2000, &mut rng).unwrap()).collect();
        let r = ks_one_sample(&x, |t| levy_theta_cdf(1.0, 1.0, t).unwrap()).unwrap();
        assert!(r.p_value > 0.001, "{r:?}");
    }

    #[test]
    fn first_return_time_law() {
        // P(R_1 = 2) = 1/2, P(R_1 = 4) = 1/8
        let mut rng = stream(22, &[]);
        let n = 200_000;
        let (mut two, mut four) = (0, 0);
        for _ in 0..n {
            match srw_scaled_return_time(1, &mut rng).unwrap() as u64 {
                2 => two += 1,
                4 => four += 1,
                _ => {}
            }
        }
        assert!((two as f64 / n as f64 - 0.5).abs() < 0.005);
        assert!((four as f64 / n as f64 - 0.125).abs() < 0.004);
    }
}
