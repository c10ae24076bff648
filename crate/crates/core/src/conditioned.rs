//! Galton-Watson trees conditioned on their exact size.
//!
//! A plane tree with `n` vertices is encoded by its offspring counts in depth
//! first order. Draw `n` i.i.d. counts, keep them only if they sum to `n - 1`,
//! then rotate them with the cycle lemma: exactly one cyclic shift is a valid
//! encoding, and it is uniform given the multiset, so the result is a GW tree
//! conditioned on `|T| = n`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::law::{OffspringLaw, StepLaw};
use crate::tree::{OccupationMeasure, SiteCounter};

/// Default limit on consecutive rejected sums.
pub const DEFAULT_MAX_ROUNDS: u64 = 10_000_000;

/// Exact sizes up to this bound are checked by dynamic programming.
const FEASIBILITY_DP_LIMIT: u64 = 1 << 20;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Whether a tree with exactly `n` vertices has positive probability: the
/// `n - 1` edges must be a sum of nonzero offspring counts.
pub fn size_is_feasible(offspring: &OffspringLaw, n: u64) -> bool {
    if n == 0 {
        return false;
    }
    let edges = n - 1;
    let parts: Vec<u64> = offspring.pmf().iter().map(|e| u64::from(e.0)).filter(|&k| k > 0).collect();
    if edges == 0 {
        return true;
    }
    let g = parts.iter().fold(0, |g, &k| gcd(g, k));
    if !edges.is_multiple_of(g) {
        return false;
    }
    let reduced: Vec<u64> = parts.iter().map(|k| k / g).collect();
    let target = edges / g;
    let lo = reduced[0];
    let hi = reduced[reduced.len() - 1];
    // every multiple beyond (lo - 1)(hi - 1) is representable
    if target >= (lo - 1) * (hi - 1) || target > FEASIBILITY_DP_LIMIT {
        return true;
    }
    let mut reachable = vec![false; target as usize + 1];
    reachable[0] = true;
    for t in 1..=target as usize {
        reachable[t] = reduced.iter().any(|&k| k as usize <= t && reachable[t - k as usize]);
    }
    reachable[target as usize]
}

/// Index where the cyclic shift of `counts` becomes a valid depth-first
/// encoding: the first position where the walk `sum (count - 1)` attains its
/// minimum. `counts` must sum to `len - 1`.
pub fn cycle_lemma_shift(counts: &[u32]) -> usize {
    let mut walk = 0i64;
    let mut best = 0i64;
    let mut at = 0usize;
    for (i, &k) in counts.iter().enumerate() {
        if walk < best {
            best = walk;
            at = i;
        }
        walk += i64::from(k) - 1;
    }
    at
}

/// The walk `sum (count - 1)` stays nonnegative before the last step and
/// ends at -1: the counts encode a single plane tree.
pub fn is_tree_encoding(counts: &[u32]) -> bool {
    let mut walk = 0i64;
    for (i, &k) in counts.iter().enumerate() {
        walk += i64::from(k) - 1;
        if walk < 0 && i + 1 != counts.len() {
            return false;
        }
    }
    walk == -1
}

/// Offspring counts of a size-conditioned tree in depth-first order.
pub fn sample_conditioned_encoding<R: Rng + ?Sized>(
    offspring: &OffspringLaw,
    n: u64,
    max_rounds: u64,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if n == 0 {
        return Err(invalid("tree size must be at least 1"));
    }
    if !size_is_feasible(offspring, n) {
        return Err(Error::IncompatibleSize { n });
    }
    // The sequence is exchangeable, so drawing the multiset of counts and
    // shuffling it has the same law as drawing the counts one by one.
    let mut rounds = 0u64;
    let histogram = loop {
        if rounds == max_rounds {
            return Err(Error::RejectionBudgetExceeded { rounds });
        }
        rounds += 1;
        let histogram = offspring.multinomial(n, rng);
        let edges: u64 = histogram.iter().zip(offspring.pmf()).map(|(&c, &(k, _))| c * u64::from(k)).sum();
        if edges == n - 1 {
            break histogram;
        }
    };
    let mut counts = Vec::with_capacity(n as usize);
    for (&c, &(k, _)) in histogram.iter().zip(offspring.pmf()) {
        counts.extend(std::iter::repeat_n(k, c as usize));
    }
    counts.shuffle(rng);
    let shift = cycle_lemma_shift(&counts);
    counts.rotate_left(shift);
    assert!(is_tree_encoding(&counts), "cycle lemma produced an invalid encoding");
    Ok(counts)
}

/// Label a depth-first encoding with i.i.d. steps and return its occupation
/// measure. One pass, with a stack of `(site, depth, children left)`.
pub fn label_encoding<R: Rng + ?Sized>(counts: &[u32], step: &StepLaw, rng: &mut R) -> Result<OccupationMeasure> {
    if !is_tree_encoding(counts) {
        return Err(invalid("offspring counts do not encode a tree"));
    }
    let mut sites = SiteCounter::new();
    let mut stack: Vec<(i64, u32, u32)> = Vec::new();
    let mut height = 0u32;
    for (i, &k) in counts.iter().enumerate() {
        let (site, depth) = if i == 0 {
            (0, 0)
        } else {
            let parent = stack.last_mut().expect("valid encodings always have an open parent");
            let placed = (parent.0 + step.sample(rng), parent.1 + 1);
            parent.2 -= 1;
            if parent.2 == 0 {
                stack.pop();
            }
            placed
        };
        sites.add(site, 1);
        height = height.max(depth);
        if k > 0 {
            stack.push((site, depth, k));
        }
    }
    Ok(OccupationMeasure::from_sorted(sites.drain(), height))
}

/// A labeled GW tree conditioned on having exactly `n` vertices, with the
/// default rejection budget.
pub fn sample_conditioned_occupation<R: Rng + ?Sized>(
    offspring: &OffspringLaw,
    step: &StepLaw,
    n: u64,
    rng: &mut R,
) -> Result<OccupationMeasure> {
    sample_conditioned_occupation_with_budget(offspring, step, n, DEFAULT_MAX_ROUNDS, rng)
}

pub fn sample_conditioned_occupation_with_budget<R: Rng + ?Sized>(
    offspring: &OffspringLaw,
    step: &StepLaw,
    n: u64,
    max_rounds: u64,
    rng: &mut R,
) -> Result<OccupationMeasure> {
    let counts = sample_conditioned_encoding(offspring, n, max_rounds, rng)?;
    let measure = label_encoding(&counts, step, rng)?;
    debug_assert_eq!(measure.total(), n);
    Ok(measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn single_vertex() {
        let mut rng = stream(1, &[]);
        let m = sample_conditioned_occupation(&OffspringLaw::poisson1(), &StepLaw::uniform3(), 1, &mut rng).unwrap();
        assert_eq!(m.counts(), &[(0, 1)]);
        assert_eq!(m.height(), 0);
    }

    #[test]
    fn three_vertex_binary_tree_is_a_cherry() {
        let mut rng = stream(2, &[]);
        for _ in 0..100 {
            let counts = sample_conditioned_encoding(&OffspringLaw::binary(), 3, 1000, &mut rng).unwrap();
            assert_eq!(counts, vec![2, 0, 0]);
            let m = label_encoding(&counts, &StepLaw::uniform3(), &mut rng).unwrap();
            assert_eq!(m.total(), 3);
            assert_eq!(m.height(), 1);
        }
    }

    #[test]
    fn even_binary_sizes_are_incompatible() {
        let mut rng = stream(3, &[]);
        let err =
            sample_conditioned_occupation(&OffspringLaw::binary(), &StepLaw::uniform3(), 4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::IncompatibleSize { n: 4 }));
        assert!(sample_conditioned_occupation(&OffspringLaw::binary(), &StepLaw::uniform3(), 0, &mut rng).is_err());
    }

    #[test]
    fn feasibility() {
        let binary = OffspringLaw::binary();
        assert!(size_is_feasible(&binary, 1));
        assert!(size_is_feasible(&binary, 9));
        assert!(!size_is_feasible(&binary, 10));
        // children in {0, 3, 5}: 1, 2, 4 and 7 edges are impossible, 8 and up all work
        let sparse = OffspringLaw::new("t", &[(0, 11.0 / 15.0), (3, 1.0 / 6.0), (5, 0.1)]).unwrap();
        for (edges, ok) in
            [(1, false), (2, false), (3, true), (4, false), (5, true), (7, false), (8, true), (9, true), (11, true)]
        {
            assert_eq!(size_is_feasible(&sparse, edges + 1), ok, "{edges}");
        }
    }

    #[test]
    fn rejection_budget_is_enforced() {
        let mut rng = stream(4, &[]);
        let err = sample_conditioned_encoding(&OffspringLaw::poisson1(), 10_000, 1, &mut rng);
        // one round almost never hits the exact sum
        if let Err(e) = err {
            assert!(matches!(e, Error::RejectionBudgetExceeded { rounds: 1 }));
        }
    }

    #[test]
    fn cycle_lemma_known_case() {
        // 0 2 0 rotated by one gives 2 0 0
        assert_eq!(cycle_lemma_shift(&[0, 2, 0]), 1);
        assert_eq!(cycle_lemma_shift(&[2, 0, 0]), 0);
        assert_eq!(cycle_lemma_shift(&[0, 0, 2]), 2);
        assert!(is_tree_encoding(&[2, 0, 0]));
        assert!(!is_tree_encoding(&[0, 2, 0]));
        assert!(!is_tree_encoding(&[1, 1]));
    }

    proptest! {
        #[test]
        fn every_rotation_class_has_exactly_one_tree(raw in proptest::collection::vec(0u32..4, 1..40)) {
            // pad so that the counts sum to len - 1
            let mut counts = raw;
            let edges = counts.iter().sum::<u32>() as usize;
            if edges + 1 >= counts.len() {
                counts.resize(edges + 1, 0);
            } else {
                counts.push((counts.len() - edges) as u32);
            }
            let n = counts.len();
            let valid = (0..n)
                .filter(|&r| {
                    let mut c = counts.clone();
                    c.rotate_left(r);
                    is_tree_encoding(&c)
                })
                .count();
            prop_assert_eq!(valid, 1);
            let mut c = counts.clone();
            c.rotate_left(cycle_lemma_shift(&counts));
            prop_assert!(is_tree_encoding(&c));
        }

        #[test]
        fn conditioned_size_is_exact(n in 1u64..400, seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let m = sample_conditioned_occupation(&OffspringLaw::geometric_half(), &StepLaw::lazy(), n, &mut rng).unwrap();
            prop_assert_eq!(m.total(), n);
            prop_assert!(m.count_at(0) >= 1);
            prop_assert!(u64::from(m.height()) < n);
        }
    }
}
