//! Tail-index estimation, reference laws and goodness-of-fit tests.

pub mod hill;
pub mod ks;
pub mod levy;

pub use hill::{default_k, hill_estimator, hill_sweep, TailEstimate};
pub use ks::{kolmogorov_survival, ks_one_sample, ks_two_sample, KsResult};
pub use levy::{levy_theta_cdf, levy_theta_quantile, srw_scaled_return_time};
