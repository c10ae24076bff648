use std::collections::BTreeMap;

use brw_core::conditioned::sample_conditioned_encoding;
use brw_core::ise::ise_density_sample;
use brw_core::rng::stream;
use brw_core::stats::ks_two_sample;
use brw_core::tree::{sample_tree_occupation, survival_probability_estimate, survival_probability_exact};
use brw_core::verify::{chi_square_p_value, enumerate_conditioned_laws};
use brw_core::{Error, LayeredSampler, OffspringLaw, StepLaw, TreeSampler};

/// Total, height and count at the origin; capped trees map to +inf.
fn summaries(results: impl Iterator<Item = Result<brw_core::OccupationMeasure, Error>>) -> [Vec<f64>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for r in results {
        match r {
            Ok(m) => {
                out[0].push(m.total() as f64);
                out[1].push(f64::from(m.height()));
                out[2].push(m.count_at(0) as f64);
            }
            Err(Error::VertexCapExceeded { .. }) => out.iter_mut().for_each(|v| v.push(f64::INFINITY)),
            Err(e) => panic!("{e}"),
        }
    }
    out
}

#[test]
fn layered_and_depth_first_samplers_agree_in_law() {
    let cap = 200_000;
    for (nu, f) in [(OffspringLaw::poisson1(), StepLaw::uniform3()), (OffspringLaw::geometric_half(), StepLaw::lazy())]
    {
        let trees = 20_000;
        let mut dfs = TreeSampler::new();
        let a = summaries((0..trees).map(|i| dfs.sample(&nu, &f, &mut stream(1, &[i]), cap)));
        let mut layered = LayeredSampler::new(&nu, &f);
        let b = summaries((0..trees).map(|i| layered.sample(&mut stream(2, &[i]), cap)));
        for (what, (x, y)) in ["total", "height", "origin"].iter().zip(a.iter().zip(&b)) {
            let ks = ks_two_sample(x, y).unwrap();
            assert!(ks.p_value > 1e-3, "{} {what}: D = {}, p = {}", nu.name(), ks.d_stat, ks.p_value);
        }
    }
}

#[test]
fn capped_mean_size_grows_past_fifty() {
    let (nu, f) = (OffspringLaw::poisson1(), StepLaw::uniform3());
    let cap = 1_000_000u64;
    let trees = 100_000u64;
    let mut rng = stream(3, &[]);
    let mut sampler = TreeSampler::new();
    let mut sum = 0u64;
    for _ in 0..trees {
        sum += match sampler.sample(&nu, &f, &mut rng, cap) {
            Ok(m) => m.total(),
            Err(Error::VertexCapExceeded { .. }) => cap,
            Err(e) => panic!("{e}"),
        };
    }
    let mean = sum as f64 / trees as f64;
    assert!(mean > 50.0, "{mean}");
}

#[test]
fn binary_trees_have_odd_size() {
    let (nu, f) = (OffspringLaw::binary(), StepLaw::uniform3());
    let mut rng = stream(4, &[]);
    for _ in 0..5000 {
        if let Ok(m) = sample_tree_occupation(&nu, &f, &mut rng, 100_000) {
            assert_eq!(m.total() % 2, 1);
        }
    }
}

#[test]
fn survival_tail_approaches_two_over_variance() {
    for nu in [OffspringLaw::poisson1(), OffspringLaw::geometric_half()] {
        let limit = 2.0 / nu.variance();
        let mut last_gap = f64::INFINITY;
        for (i, n) in [50u32, 100, 200, 400].into_iter().enumerate() {
            let p = survival_probability_estimate(&nu, n, 100_000, &mut stream(5, &[i as u64])).unwrap();
            let scaled = f64::from(n) * p;
            assert!((scaled / limit - 1.0).abs() <= 0.2, "{} n={n}: {scaled}", nu.name());
            // the exact sequence closes in on the limit
            let gap = (f64::from(n) * survival_probability_exact(&nu, n) - limit).abs();
            assert!(gap < last_gap, "{} n={n}", nu.name());
            last_gap = gap;
        }
    }
    // geometric(1/2): P(Z_n > 0) = 1 / (n + 1)
    for n in [1u32, 2, 10, 200] {
        let exact = survival_probability_exact(&OffspringLaw::geometric_half(), n);
        assert!((exact - 1.0 / (f64::from(n) + 1.0)).abs() < 1e-12);
    }
}

fn shape_p_value(nu: &OffspringLaw, n: usize, samples: u64, seed: u64) -> f64 {
    let (law, _) = enumerate_conditioned_laws(nu, &StepLaw::lazy(), n);
    let mut observed = BTreeMap::new();
    let mut rng = stream(seed, &[]);
    for _ in 0..samples {
        let counts = sample_conditioned_encoding(nu, n as u64, 1_000_000, &mut rng).unwrap();
        *observed.entry(counts).or_insert(0u64) += 1;
    }
    chi_square_p_value(&observed, &law).unwrap().0
}

#[test]
fn conditioned_shapes_match_enumeration() {
    // geometric(1/2) given its size is uniform over the 14 plane trees with 5 vertices
    assert!(shape_p_value(&OffspringLaw::geometric_half(), 5, 50_000, 6) > 1e-3);
    assert!(shape_p_value(&OffspringLaw::poisson1(), 4, 50_000, 7) > 1e-3);
    assert!(shape_p_value(&OffspringLaw::binary(), 7, 50_000, 8) > 1e-3);
}

#[test]
fn ise_first_moment_is_centred() {
    let (nu, f) = (OffspringLaw::poisson1(), StepLaw::uniform3());
    let moments: Vec<f64> = (0..1000u64)
        .map(|i| ise_density_sample(&nu, &f, 10_000, 0.02, &mut stream(9, &[i])).unwrap().first_moment())
        .collect();
    let n = moments.len() as f64;
    let mean = moments.iter().sum::<f64>() / n;
    let var = moments.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(mean.abs() <= 3.0 * se, "mean {mean}, se {se}");
}
