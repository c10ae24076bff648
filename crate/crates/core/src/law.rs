//! Offspring and step laws on the integer lattice.
//!
//! Both laws are validated once at construction and then sampled through an
//! inverse-CDF table over 64-bit thresholds: one `next_u64` per draw, with
//! the most likely values tested first.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PMF_SUM_TOL: f64 = 1e-12;
const MOMENT_TOL: f64 = 1e-9;
/// Presets with unbounded support are cut where the remaining tail mass
/// drops below this, then renormalized.
pub const PRESET_TAIL_CUTOFF: f64 = 1e-15;
/// Below this many summands, `sample_sum` draws them one by one.
const DIRECT_SUM_LIMIT: u64 = 24;

/// How a law is written in a config file: either `{"preset": "poisson1"}` or
/// `{"pmf": [[k, p], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawSpec {
    Preset {
        preset: String,
    },
    Pmf {
        pmf: Vec<(i64, f64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

impl LawSpec {
    pub fn preset(name: &str) -> Self {
        LawSpec::Preset { preset: name.to_string() }
    }
}

/// Walker alias table: one 64-bit draw per sample, no data-dependent loop.
#[derive(Debug, Clone)]
pub(crate) struct AliasTable {
    /// Accept slot `i` when the low word of `u * len` is below `cutoff[i]`.
    cutoff: Vec<u64>,
    alias: Vec<u32>,
    values: Vec<i64>,
    probs: Vec<f64>,
    /// Entry indices by decreasing probability, for multinomial draws.
    order: Vec<usize>,
}

impl AliasTable {
    pub(crate) fn new(entries: &[(i64, f64)]) -> Self {
        let n = entries.len();
        let total: f64 = entries.iter().map(|e| e.1).sum();
        let mut scaled: Vec<f64> = entries.iter().map(|e| e.1 / total * n as f64).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are full slots up to rounding
        for i in small.into_iter().chain(large) {
            scaled[i] = 1.0;
        }
        let cutoff = scaled
            .iter()
            .map(|&p| if p >= 1.0 { u64::MAX } else { (p * 18_446_744_073_709_551_616.0) as u64 })
            .collect();
        let probs: Vec<f64> = entries.iter().map(|e| e.1 / total).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        AliasTable { cutoff, alias, values: entries.iter().map(|e| e.0).collect(), probs, order }
    }

    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let wide = u128::from(rng.next_u64()) * self.values.len() as u128;
        let slot = (wide >> 64) as usize;
        let idx = if (wide as u64) < self.cutoff[slot] { slot } else { self.alias[slot] as usize };
        self.values[idx]
    }

    /// Counts of each entry among `count` draws, added into `out`. Sequential
    /// conditional binomials, most likely entries first so the loop usually
    /// stops early.
    fn multinomial_with<R, F>(&self, count: u64, rng: &mut R, mut visit: F)
    where
        R: Rng + ?Sized,
        F: FnMut(usize, u64),
    {
        let mut remaining = count;
        let mut rest = 1.0f64;
        for (pos, &i) in self.order.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let p = self.probs[i];
            let c = if pos + 1 == self.order.len() {
                remaining
            } else {
                let q = (p / rest).clamp(0.0, 1.0);
                Binomial::new(remaining, q).expect("binomial parameters are in range").sample(rng)
            };
            if c > 0 {
                visit(i, c);
            }
            remaining -= c;
            rest -= p;
        }
    }
}

fn check_pmf(entries: &[(i64, f64)]) -> Result<Vec<(i64, f64)>> {
    if entries.is_empty() {
        return Err(Error::NotAProbability("empty pmf".into()));
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by_key(|e| e.0);
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::NotAProbability(format!("duplicate support point {}", w[0].0)));
        }
    }
    for &(k, p) in &sorted {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::NotAProbability(format!("p({k}) = {p}")));
        }
    }
    let sum: f64 = sorted.iter().map(|e| e.1).sum();
    if (sum - 1.0).abs() > PMF_SUM_TOL {
        return Err(Error::NotAProbability(format!("masses sum to {sum}")));
    }
    sorted.retain(|e| e.1 > 0.0);
    Ok(sorted)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Truncate an infinite pmf given term by term once the tail is below
/// [`PRESET_TAIL_CUTOFF`], then renormalize.
fn truncated(terms: impl Fn(u32) -> f64, max_terms: u32) -> Vec<(i64, f64)> {
    let all: Vec<f64> = (0..max_terms).map(&terms).collect();
    // tails[k] = sum_{j > k} p_j, accumulated from the top to avoid cancellation
    let mut tails = vec![0.0; all.len()];
    let mut acc = 0.0;
    for k in (0..all.len()).rev() {
        tails[k] = acc;
        acc += all[k];
    }
    let cut = tails.iter().position(|&t| t < PRESET_TAIL_CUTOFF).unwrap_or(all.len() - 1);
    let kept = &all[..=cut];
    let mass: f64 = kept.iter().sum();
    kept.iter().enumerate().map(|(k, &p)| (k as i64, p / mass)).collect()
}

/// A critical offspring law: mean one, finite positive variance.
#[derive(Debug, Clone)]
pub struct OffspringLaw {
    name: String,
    pmf: Vec<(u32, f64)>,
    mean: f64,
    variance: f64,
    sampler: AliasTable,
}

/// Validate a raw offspring pmf.
pub fn validate_offspring_law(entries: &[(i64, f64)]) -> Result<OffspringLaw> {
    OffspringLaw::new("custom", entries)
}

impl OffspringLaw {
    pub fn new(name: &str, entries: &[(i64, f64)]) -> Result<Self> {
        let pmf = check_pmf(entries)?;
        if let Some(&(k, _)) = pmf.iter().find(|e| e.0 < 0 || e.0 > u32::MAX as i64) {
            return Err(Error::NotAProbability(format!("offspring count {k} out of range")));
        }
        let mean: f64 = pmf.iter().map(|&(k, p)| k as f64 * p).sum();
        if (mean - 1.0).abs() > MOMENT_TOL {
            return Err(Error::NotCritical { mean });
        }
        let second: f64 = pmf.iter().map(|&(k, p)| (k as f64).powi(2) * p).sum();
        let variance = second - mean * mean;
        if variance <= MOMENT_TOL {
            return Err(Error::ZeroVariance);
        }
        let sampler = AliasTable::new(&pmf);
        let pmf: Vec<(u32, f64)> = pmf.into_iter().map(|(k, p)| (k as u32, p)).collect();
        Ok(OffspringLaw { name: name.to_string(), pmf, mean, variance, sampler })
    }

    /// Poisson(1), truncated where the tail drops below 1e-15.
    pub fn poisson1() -> Self {
        let entries = truncated(|k| (-1.0f64).exp() / (1..=k).map(f64::from).product::<f64>(), 40);
        Self::new("Poisson(1)", &entries).expect("Poisson(1) preset is critical")
    }

    /// Geometric(1/2) on {0, 1, 2, ...}: p_k = 2^-(k+1), truncated like Poisson(1).
    pub fn geometric_half() -> Self {
        let entries = truncated(|k| 0.5f64.powi(k as i32 + 1), 64);
        Self::new("Geometric(1/2)", &entries).expect("geometric preset is critical")
    }

    /// Binary branching: no children or two, each with probability 1/2.
    pub fn binary() -> Self {
        Self::new("binary", &[(0, 0.5), (2, 0.5)]).expect("binary preset is critical")
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "poisson1" | "poisson" => Ok(Self::poisson1()),
            "geometric" | "geometric_half" => Ok(Self::geometric_half()),
            "binary" => Ok(Self::binary()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_spec(spec: &LawSpec) -> Result<Self> {
        match spec {
            LawSpec::Preset { preset } => Self::from_preset(preset),
            LawSpec::Pmf { pmf, name } => Self::new(name.as_deref().unwrap_or("custom"), pmf),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Support points with positive mass, in increasing order.
    pub fn pmf(&self) -> &[(u32, f64)] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// sigma_nu^2
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn max_offspring(&self) -> u32 {
        self.pmf[self.pmf.len() - 1].0
    }

    pub fn prob(&self, k: u32) -> f64 {
        self.pmf.binary_search_by_key(&k, |e| e.0).map(|i| self.pmf[i].1).unwrap_or(0.0)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.sampler.sample(rng) as u32
    }

    /// Counts of each support point among `count` i.i.d. draws, aligned with
    /// [`pmf`](Self::pmf). Drawn by sequential conditional binomials, so the
    /// cost depends on the support size, not on `count`.
    pub fn multinomial<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> Vec<u64> {
        let mut out = vec![0u64; self.pmf.len()];
        self.sampler.multinomial_with(count, rng, |i, c| out[i] += c);
        out
    }

    /// Sum of `count` i.i.d. offspring draws: the next generation size of a
    /// Galton-Watson process with `count` individuals.
    pub fn sample_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> u64 {
        if count <= DIRECT_SUM_LIMIT {
            (0..count).map(|_| u64::from(self.sample(rng))).sum()
        } else {
            let mut sum = 0u64;
            self.sampler.multinomial_with(count, rng, |i, c| sum += c * u64::from(self.pmf[i].0));
            sum
        }
    }

    /// Probability generating function.
    pub fn pgf(&self, s: f64) -> f64 {
        self.pmf.iter().map(|&(k, p)| p * s.powi(k as i32)).sum()
    }
}

/// A span-one, mean-zero step law with finite support.
#[derive(Debug, Clone)]
pub struct StepLaw {
    name: String,
    pmf: Vec<(i64, f64)>,
    variance: f64,
    sampler: AliasTable,
}

/// Validate a raw step pmf.
pub fn validate_step_law(entries: &[(i64, f64)]) -> Result<StepLaw> {
    StepLaw::new("custom", entries)
}

impl StepLaw {
    pub fn new(name: &str, entries: &[(i64, f64)]) -> Result<Self> {
        let pmf = check_pmf(entries)?;
        let mean: f64 = pmf.iter().map(|&(j, p)| j as f64 * p).sum();
        if mean.abs() > MOMENT_TOL {
            return Err(Error::NonzeroMean { mean });
        }
        let base = pmf[0].0;
        let span = pmf.iter().fold(0u64, |g, &(j, _)| gcd(g, (j - base).unsigned_abs()));
        if span != 1 {
            return Err(Error::SpanNotOne { span });
        }
        let variance = pmf.iter().map(|&(j, p)| (j as f64).powi(2) * p).sum::<f64>() - mean * mean;
        let sampler = AliasTable::new(&pmf);
        Ok(StepLaw { name: name.to_string(), pmf, variance, sampler })
    }

    /// Uniform on {-1, 0, 1}.
    pub fn uniform3() -> Self {
        let third = 1.0 / 3.0;
        Self::new("uniform{-1,0,1}", &[(-1, third), (0, third), (1, third)]).expect("uniform preset is valid")
    }

    /// Lazy simple walk: 1/4, 1/2, 1/4 on {-1, 0, 1}.
    pub fn lazy() -> Self {
        Self::new("lazy", &[(-1, 0.25), (0, 0.5), (1, 0.25)]).expect("lazy preset is valid")
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "uniform3" | "uniform" => Ok(Self::uniform3()),
            "lazy" => Ok(Self::lazy()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_spec(spec: &LawSpec) -> Result<Self> {
        match spec {
            LawSpec::Preset { preset } => Self::from_preset(preset),
            LawSpec::Pmf { pmf, name } => Self::new(name.as_deref().unwrap_or("custom"), pmf),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pmf(&self) -> &[(i64, f64)] {
        &self.pmf
    }

    /// sigma_F^2, in squared lattice units.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        self.sampler.sample(rng)
    }

    /// Distribute `count` i.i.d. steps: calls `visit(step, how_many)` for
    /// every step value drawn at least once.
    pub fn multinomial_with<R, F>(&self, count: u64, rng: &mut R, mut visit: F)
    where
        R: Rng + ?Sized,
        F: FnMut(i64, u64),
    {
        self.sampler.multinomial_with(count, rng, |i, c| visit(self.pmf[i].0, c));
    }
}
