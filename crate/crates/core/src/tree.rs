//! Labeled Galton-Watson trees and their occupation measures.
//!
//! A tree is never stored: vertices are generated depth first from an
//! explicit stack of pending `(depth, site)` pairs, and each visited vertex
//! bumps the count at its label. The root sits at site 0; a child sits at its
//! parent's site plus an independent step.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::law::{AliasTable, OffspringLaw, StepLaw};

/// Default guard on the size of a single unconditioned tree. Critical trees
/// have infinite mean size, so every full-tree sampler takes a cap.
pub const DEFAULT_VERTEX_CAP: u64 = 100_000_000;

/// The vertical profile X(x; T) of one labeled tree: how many vertices carry
/// each label, summed over all generations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupationMeasure {
    /// Sorted by site; every count is at least one.
    counts: Vec<(i64, u64)>,
    total: u64,
    height: u32,
}

impl OccupationMeasure {
    /// Build from `(site, count)` pairs. Sites must be distinct, counts
    /// positive, and the root site 0 must be occupied.
    pub fn new(mut counts: Vec<(i64, u64)>, height: u32) -> Result<Self> {
        counts.sort_unstable_by_key(|c| c.0);
        if counts.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("duplicate site in occupation counts"));
        }
        if counts.iter().any(|c| c.1 == 0) {
            return Err(invalid("occupation counts must be positive"));
        }
        let measure = Self::from_sorted(counts, height);
        if measure.count_at(0) == 0 {
            return Err(invalid("the root site 0 must be occupied"));
        }
        Ok(measure)
    }

    pub(crate) fn from_sorted(counts: Vec<(i64, u64)>, height: u32) -> Self {
        let total = counts.iter().map(|c| c.1).sum();
        OccupationMeasure { counts, total, height }
    }

    /// The single-vertex tree.
    pub fn root_only() -> Self {
        Self::from_sorted(vec![(0, 1)], 0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[(i64, u64)] {
        &self.counts
    }

    pub fn count_at(&self, site: i64) -> u64 {
        self.counts.binary_search_by_key(&site, |c| c.0).map(|i| self.counts[i].1).unwrap_or(0)
    }

    pub fn min_site(&self) -> i64 {
        self.counts[0].0
    }

    pub fn max_site(&self) -> i64 {
        self.counts[self.counts.len() - 1].0
    }

    /// Counts on every site of `[min_site, max_site]`, zeros included.
    pub fn dense(&self) -> Vec<u64> {
        let lo = self.min_site();
        let mut out = vec![0; (self.max_site() - lo + 1) as usize];
        for &(site, c) in &self.counts {
            out[(site - lo) as usize] = c;
        }
        out
    }

    /// Linear interpolation of the counts to a real argument.
    pub fn interpolate(&self, z: f64) -> f64 {
        let j = z.floor();
        let frac = z - j;
        let j = j as i64;
        let a = self.count_at(j) as f64;
        if frac == 0.0 {
            return a;
        }
        (1.0 - frac) * a + frac * self.count_at(j + 1) as f64
    }

    /// `site,count` lines sorted by site, after a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "site,count")?;
        for &(site, c) in &self.counts {
            writeln!(out, "{site},{c}")?;
        }
        Ok(())
    }
}

/// Dense per-site counter with a movable origin; reused across trees.
#[derive(Debug, Clone)]
pub(crate) struct SiteCounter {
    origin: i64,
    counts: Vec<u64>,
    /// Occupied range; `lo > hi` when empty.
    lo: i64,
    hi: i64,
}

impl SiteCounter {
    pub(crate) fn new() -> Self {
        SiteCounter { origin: -32, counts: vec![0; 65], lo: i64::MAX, hi: i64::MIN }
    }

    #[inline]
    pub(crate) fn add(&mut self, site: i64, count: u64) {
        let mut idx = site.wrapping_sub(self.origin) as u64;
        if idx >= self.counts.len() as u64 {
            self.grow(site);
            idx = (site - self.origin) as u64;
        }
        self.counts[idx as usize] += count;
        self.lo = self.lo.min(site);
        self.hi = self.hi.max(site);
    }

    fn grow(&mut self, site: i64) {
        let old_lo = self.origin;
        let old_hi = self.origin + self.counts.len() as i64 - 1;
        let span = (old_hi - old_lo + 1).max(64);
        let new_lo = if site < old_lo { site - span } else { old_lo };
        let new_hi = if site > old_hi { site + span } else { old_hi };
        let mut counts = vec![0; (new_hi - new_lo + 1) as usize];
        let shift = (old_lo - new_lo) as usize;
        counts[shift..shift + self.counts.len()].copy_from_slice(&self.counts);
        self.counts = counts;
        self.origin = new_lo;
    }

    /// Nonzero counts in site order; leaves the counter empty.
    pub(crate) fn drain(&mut self) -> Vec<(i64, u64)> {
        let mut out = Vec::new();
        self.drain_into(&mut out);
        out
    }

    pub(crate) fn drain_into(&mut self, out: &mut Vec<(i64, u64)>) {
        out.clear();
        for site in self.lo..=self.hi {
            let slot = &mut self.counts[(site - self.origin) as usize];
            if *slot > 0 {
                out.push((site, *slot));
                *slot = 0;
            }
        }
        self.lo = i64::MAX;
        self.hi = i64::MIN;
    }
}

/// Depth-first sampler of labeled critical trees with reusable scratch space.
#[derive(Debug)]
pub struct TreeSampler {
    stack: Vec<(u32, i64)>,
    sites: SiteCounter,
}

impl Default for TreeSampler {
    fn default() -> Self {
        Self::new()
    }
}

impl TreeSampler {
    pub fn new() -> Self {
        TreeSampler { stack: Vec::with_capacity(256), sites: SiteCounter::new() }
    }

    /// Sample one labeled tree and return its occupation measure.
    ///
    /// Vertices are produced in depth-first order: pop a vertex, record it,
    /// draw its offspring count, then draw one step per child. Fails with
    /// [`Error::VertexCapExceeded`] as soon as a vertex beyond `vertex_cap`
    /// would be visited.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        offspring: &OffspringLaw,
        step: &StepLaw,
        rng: &mut R,
        vertex_cap: u64,
    ) -> Result<OccupationMeasure> {
        if vertex_cap == 0 {
            return Err(invalid("vertex_cap must be at least 1"));
        }
        self.stack.clear();
        self.stack.push((0, 0));
        let mut total = 0u64;
        let mut height = 0u32;
        while let Some((depth, site)) = self.stack.pop() {
            if total == vertex_cap {
                let pending_roots = self.stack.len() as u64 + 1;
                self.stack.clear();
                self.sites.drain();
                return Err(Error::VertexCapExceeded { cap: vertex_cap, partial_total: total, pending_roots });
            }
            total += 1;
            self.sites.add(site, 1);
            height = height.max(depth);
            let children = offspring.sample(rng);
            for _ in 0..children {
                self.stack.push((depth + 1, site + step.sample(rng)));
            }
        }
        let measure = OccupationMeasure::from_sorted(self.sites.drain(), height);
        debug_assert_eq!(measure.total(), total, "occupation counts must add up to the tree size");
        Ok(measure)
    }
}

/// Sums of up to this many offspring draws come from a precomputed table.
const SUM_TABLE_MAX: usize = 256;
/// Steps of up to this many siblings come from a precomputed table of
/// multinomial outcomes, as long as the table stays below `STEP_TABLE_ENTRIES`.
const STEP_TABLE_MAX: usize = 128;
const STEP_TABLE_ENTRIES: usize = 16_384;
/// Table outcomes below this probability are dropped; far below what a
/// 64-bit alias draw resolves.
const TABLE_FLOOR: f64 = 1e-22;

/// Exact batched draws for one (offspring, step) pair.
#[derive(Debug, Clone)]
struct BatchTables {
    /// `sums[c - 1]` is the law of the sum of `c` offspring draws.
    sums: Vec<AliasTable>,
    step_values: Vec<i64>,
    /// `steps[k - 1]` draws an index into `outcomes[k - 1]`, a flattened list
    /// of per-step-value counts summing to `k`.
    steps: Vec<AliasTable>,
    outcomes: Vec<Vec<u64>>,
}

impl BatchTables {
    fn new(offspring: &OffspringLaw, step: &StepLaw) -> Self {
        let base: Vec<f64> = {
            let max = offspring.max_offspring() as usize;
            let mut v = vec![0.0; max + 1];
            for &(k, p) in offspring.pmf() {
                v[k as usize] = p;
            }
            v
        };
        let mut sums = Vec::with_capacity(SUM_TABLE_MAX);
        let mut conv = vec![1.0];
        for _ in 0..SUM_TABLE_MAX {
            let mut next = vec![0.0; conv.len() + base.len() - 1];
            for (i, &a) in conv.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &b) in base.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            // the far tail is negligible and would only slow the next round
            while next.len() > 1 && next[next.len() - 1] < TABLE_FLOOR * 1e-8 {
                next.pop();
            }
            conv = next;
            let entries: Vec<(i64, f64)> =
                conv.iter().enumerate().filter(|e| *e.1 > TABLE_FLOOR).map(|(k, &p)| (k as i64, p)).collect();
            sums.push(AliasTable::new(&entries));
        }

        let step_values: Vec<i64> = step.pmf().iter().map(|e| e.0).collect();
        let probs: Vec<f64> = step.pmf().iter().map(|e| e.1).collect();
        let ln_fact: Vec<f64> = std::iter::once(0.0)
            .chain((1..=STEP_TABLE_MAX).scan(0.0, |acc, i| {
                *acc += (i as f64).ln();
                Some(*acc)
            }))
            .collect();
        let ln_probs: Vec<f64> = probs.iter().map(|q| q.ln()).collect();
        let mut steps = Vec::new();
        let mut outcomes = Vec::new();
        for k in 1..=STEP_TABLE_MAX {
            let mut flat = Vec::new();
            let mut weights = Vec::new();
            let mut counts = vec![0u64; probs.len()];
            compositions(k as u64, 0, &mut counts, &mut flat);
            let s = probs.len();
            if flat.len() / s > STEP_TABLE_ENTRIES {
                break;
            }
            let log_k_fact = ln_fact[k];
            let mut kept = Vec::new();
            for combo in flat.chunks(s) {
                let mut log_w = log_k_fact;
                for (&m, &lq) in combo.iter().zip(&ln_probs) {
                    log_w += m as f64 * lq - ln_fact[m as usize];
                }
                let w = log_w.exp();
                if w > TABLE_FLOOR {
                    weights.push(((kept.len() / s) as i64, w));
                    kept.extend_from_slice(combo);
                }
            }
            steps.push(AliasTable::new(&weights));
            outcomes.push(kept);
        }
        BatchTables { sums, step_values, steps, outcomes }
    }
}

/// Append every way to split `left` among `counts[slot..]`.
fn compositions(left: u64, slot: usize, counts: &mut [u64], out: &mut Vec<u64>) {
    if slot + 1 == counts.len() {
        counts[slot] = left;
        out.extend_from_slice(counts);
        return;
    }
    for m in 0..=left {
        counts[slot] = m;
        compositions(left - m, slot + 1, counts, out);
    }
}

/// Samples the same labeled trees as [`TreeSampler`], one generation at a
/// time on per-site counts instead of per vertex.
///
/// The occupation measure only depends on how many vertices of each
/// generation sit at each site, and that histogram is itself a Markov chain:
/// the `c` vertices at site `x` have `xi_1 + ... + xi_c` children, spread
/// over `x + step` multinomially. Both draws are exact and cost O(1) for
/// small counts (precomputed alias tables) or a few binomials for large ones,
/// so work per generation follows its spatial width rather than its size.
/// The rare huge trees that dominate the cost of an ensemble get much cheaper.
#[derive(Debug, Clone)]
pub struct LayeredSampler {
    offspring: OffspringLaw,
    step: StepLaw,
    tables: Arc<BatchTables>,
    current: Vec<(i64, u64)>,
    next: SiteCounter,
    sites: SiteCounter,
}

impl LayeredSampler {
    pub fn new(offspring: &OffspringLaw, step: &StepLaw) -> Self {
        LayeredSampler {
            offspring: offspring.clone(),
            step: step.clone(),
            tables: Arc::new(BatchTables::new(offspring, step)),
            current: Vec::with_capacity(64),
            next: SiteCounter::new(),
            sites: SiteCounter::new(),
        }
    }

    pub fn offspring(&self) -> &OffspringLaw {
        &self.offspring
    }

    pub fn step(&self) -> &StepLaw {
        &self.step
    }

    /// Sample one labeled tree. On a cap hit, `partial_total` counts the
    /// completed generations and `pending_roots` is the size of the first
    /// generation that did not fit.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R, vertex_cap: u64) -> Result<OccupationMeasure> {
        if vertex_cap == 0 {
            return Err(invalid("vertex_cap must be at least 1"));
        }
        let LayeredSampler { offspring, step, tables, current, next, sites } = self;
        current.clear();
        current.push((0, 1));
        let mut total = 0u64;
        let mut generation = 0u32;
        loop {
            let size: u64 = current.iter().map(|c| c.1).sum();
            if total + size > vertex_cap {
                sites.drain_into(current);
                current.clear();
                return Err(Error::VertexCapExceeded { cap: vertex_cap, partial_total: total, pending_roots: size });
            }
            total += size;
            for &(site, count) in current.iter() {
                sites.add(site, count);
                let children = if count as usize <= SUM_TABLE_MAX {
                    tables.sums[count as usize - 1].sample(rng) as u64
                } else {
                    offspring.sample_sum(count, rng)
                };
                if children == 0 {
                    continue;
                }
                if let Some(table) = tables.steps.get(children as usize - 1) {
                    let s = tables.step_values.len();
                    let idx = table.sample(rng) as usize;
                    let combo = &tables.outcomes[children as usize - 1][idx * s..(idx + 1) * s];
                    for (&j, &m) in tables.step_values.iter().zip(combo) {
                        if m > 0 {
                            next.add(site + j, m);
                        }
                    }
                } else {
                    step.multinomial_with(children, rng, |j, m| next.add(site + j, m));
                }
            }
            next.drain_into(current);
            if current.is_empty() {
                break;
            }
            generation += 1;
        }
        let measure = OccupationMeasure::from_sorted(sites.drain(), generation);
        debug_assert_eq!(measure.total(), total, "occupation counts must add up to the tree size");
        Ok(measure)
    }
}

/// Sample one labeled critical tree; see [`TreeSampler::sample`].
pub fn sample_tree_occupation<R: Rng + ?Sized>(
    offspring: &OffspringLaw,
    step: &StepLaw,
    rng: &mut R,
    vertex_cap: u64,
) -> Result<OccupationMeasure> {
    TreeSampler::new().sample(offspring, step, rng, vertex_cap)
}

/// Total progeny of a Galton-Watson forest with `roots` ancestors, found by
/// summing generation sizes. Costs one multinomial draw per generation rather
/// than one draw per vertex, so it needs no cap.
pub fn sample_forest_size<R: Rng + ?Sized>(offspring: &OffspringLaw, roots: u64, rng: &mut R) -> u64 {
    let mut generation = roots;
    let mut total = 0u64;
    while generation > 0 {
        total += generation;
        generation = offspring.sample_sum(generation, rng);
    }
    total
}

/// Size of a single unlabeled tree.
pub fn sample_tree_size<R: Rng + ?Sized>(offspring: &OffspringLaw, rng: &mut R) -> u64 {
    sample_forest_size(offspring, 1, rng)
}

/// Exact size of a tree whose labeled sampling stopped at the cap: the
/// visited vertices plus one independent subtree per pending stack entry.
/// Returns `None` for any other error.
pub fn complete_capped_size<R: Rng + ?Sized>(err: &Error, offspring: &OffspringLaw, rng: &mut R) -> Option<u64> {
    match *err {
        Error::VertexCapExceeded { partial_total, pending_roots, .. } => {
            Some(partial_total + sample_forest_size(offspring, pending_roots, rng))
        }
        _ => None,
    }
}

/// Monte Carlo estimate of P(Z_n > 0) for a single ancestor, simulating
/// generation sizes only. Extinction time convention: zeta > n iff Z_n > 0.
pub fn survival_probability_estimate<R: Rng + ?Sized>(
    offspring: &OffspringLaw,
    generation: u32,
    trials: u64,
    rng: &mut R,
) -> Result<f64> {
    if generation == 0 {
        return Err(invalid("generation must be at least 1"));
    }
    if trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let mut alive = 0u64;
    for _ in 0..trials {
        let mut z = 1u64;
        for _ in 0..generation {
            z = offspring.sample_sum(z, rng);
            if z == 0 {
                break;
            }
        }
        if z > 0 {
            alive += 1;
        }
    }
    Ok(alive as f64 / trials as f64)
}

/// P(Z_n > 0) from the iterated generating function: 1 - f^(n)(0).
pub fn survival_probability_exact(offspring: &OffspringLaw, generation: u32) -> f64 {
    let mut q = 0.0;
    for _ in 0..generation {
        q = offspring.pgf(q);
    }
    1.0 - q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::RngCore;

    /// Replays a fixed list of words, then zeros.
    struct Scripted(Vec<u64>, usize);

    impl RngCore for Scripted {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }
        fn next_u64(&mut self) -> u64 {
            let v = self.0.get(self.1).copied().unwrap_or(0);
            self.1 += 1;
            v
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            for b in dst {
                *b = self.next_u64() as u8;
            }
        }
    }

    #[test]
    fn forced_leaf_root_gives_single_vertex() {
        // binary law: the first threshold in probability order belongs to 0
        let mut rng = Scripted(vec![0], 0);
        let m = sample_tree_occupation(&OffspringLaw::binary(), &StepLaw::uniform3(), &mut rng, 10).unwrap();
        assert_eq!(m.counts(), &[(0, 1)]);
        assert_eq!(m.total(), 1);
        assert_eq!(m.height(), 0);
    }

    #[test]
    fn binary_trees_have_odd_size() {
        let (nu, f) = (OffspringLaw::binary(), StepLaw::uniform3());
        let mut rng = stream(1, &[]);
        let mut sampler = TreeSampler::new();
        for _ in 0..2000 {
            let m = sampler.sample(&nu, &f, &mut rng, 1_000_000);
            if let Ok(m) = m {
                assert_eq!(m.total() % 2, 1);
                assert_eq!(m.counts().iter().map(|c| c.1).sum::<u64>(), m.total());
                assert!(m.count_at(0) >= 1);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (nu, f) = (OffspringLaw::poisson1(), StepLaw::uniform3());
        let a: Vec<_> = {
            let mut rng = stream(9, &[4]);
            (0..200).map(|_| sample_tree_occupation(&nu, &f, &mut rng, 1 << 30)).collect()
        };
        let b: Vec<_> = {
            let mut rng = stream(9, &[4]);
            let mut s = TreeSampler::new();
            (0..200).map(|_| s.sample(&nu, &f, &mut rng, 1 << 30)).collect()
        };
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.as_ref().ok(), y.as_ref().ok());
        }
    }

    #[test]
    fn cap_is_reported_and_size_can_be_completed() {
        let (nu, f) = (OffspringLaw::poisson1(), StepLaw::uniform3());
        let mut rng = stream(2, &[]);
        let mut sampler = TreeSampler::new();
        let mut hits = 0;
        for _ in 0..3000 {
            match sampler.sample(&nu, &f, &mut rng, 50) {
                Ok(m) => assert!(m.total() <= 50),
                Err(e) => {
                    let Error::VertexCapExceeded { partial_total, pending_roots, .. } = e else {
                        panic!("unexpected {e}");
                    };
                    assert_eq!(partial_total, 50);
                    assert!(pending_roots >= 1);
                    let size = complete_capped_size(&e, &nu, &mut rng).unwrap();
                    assert!(size > 50);
                    hits += 1;
                }
            }
        }
        // P(|T| > 50) = 0.11 for Poisson(1)
        assert!((200..500).contains(&hits), "{hits}");
        // the sampler is still usable after a cap hit
        assert!(sampler.sample(&nu, &f, &mut rng, 1 << 40).is_ok());
    }

    #[test]
    fn tree_size_law_matches_borel() {
        // Poisson(1) tree sizes are Borel: P(n) = e^-n n^(n-1) / n!
        let nu = OffspringLaw::poisson1();
        let mut rng = stream(3, &[]);
        let reps = 100_000;
        let mut hist = [0u64; 6];
        for _ in 0..reps {
            let n = sample_tree_size(&nu, &mut rng) as usize;
            if n < 6 {
                hist[n] += 1;
            }
        }
        for n in 1..6u32 {
            let nf = n as f64;
            let fact: f64 = (1..=n).map(f64::from).product();
            let p = (-nf).exp() * nf.powi(n as i32 - 1) / fact;
            let got = hist[n as usize] as f64 / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((got - p).abs() < 5.0 * se, "n={n}: {got} vs {p}");
        }
    }

    #[test]
    fn one_generation_survival() {
        let mut rng = stream(4, &[]);
        let p = survival_probability_estimate(&OffspringLaw::binary(), 1, 100_000, &mut rng).unwrap();
        assert!((p - 0.5).abs() < 0.01);
        assert!((survival_probability_exact(&OffspringLaw::binary(), 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn survival_argument_checks() {
        let mut rng = stream(4, &[]);
        assert!(survival_probability_estimate(&OffspringLaw::binary(), 0, 10, &mut rng).is_err());
        assert!(survival_probability_estimate(&OffspringLaw::binary(), 3, 0, &mut rng).is_err());
    }

    #[test]
    fn measure_validation_and_interpolation() {
        assert!(OccupationMeasure::new(vec![(1, 1)], 0).is_err());
        assert!(OccupationMeasure::new(vec![(0, 1), (0, 2)], 0).is_err());
        assert!(OccupationMeasure::new(vec![(0, 0)], 0).is_err());
        let m = OccupationMeasure::new(vec![(1, 2), (0, 4), (-2, 1)], 3).unwrap();
        assert_eq!(m.total(), 7);
        assert_eq!(m.dense(), vec![1, 0, 4, 2]);
        assert_eq!(m.interpolate(0.5), 3.0);
        assert_eq!(m.interpolate(-1.5), 0.5);
        assert_eq!(m.interpolate(2.0), 0.0);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "site,count\n-2,1\n0,4\n1,2\n");
    }
}
