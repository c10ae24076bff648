//! Direct samples of the limit process from its jump representation.
//!
//! Jumps arrive as a Poisson point process in (time, size) with intensity
//! `dt dl / sqrt(2 pi l^3)`, each carrying an independent ISE density `h`:
//!
//! ```text
//! g_s(x) = sum_{t_k <= s} l_k^{3/4} h_k(l_k^{-1/4} (sigma_nu / sigma_F) x) / (sigma_nu sigma_F)
//! ```
//!
//! The intensity has infinite mass near `l = 0`, so sizes below `l_min` are
//! dropped. The expected area they carry is `s sqrt(2 l_min / pi)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{DensityCurve, Grid};
use crate::error::{invalid, Error, Result};
use crate::ise::{ise_density_sample, IseSample};
use crate::law::{OffspringLaw, StepLaw};
use crate::rng::stream;

/// `Lambda(l_min) = sqrt(2 / (pi l_min))`, the intensity mass above `l_min`
/// per unit time.
pub fn tail_intensity(l_min: f64) -> f64 {
    (2.0 / (std::f64::consts::PI * l_min)).sqrt()
}

/// Mean number of atoms with `l >= l_min` and `t <= s_max`.
pub fn expected_atom_count(s_max: f64, l_min: f64) -> f64 {
    s_max * tail_intensity(l_min)
}

/// Expected total area of the dropped jumps up to time `s`:
/// `s * integral_0^{l_min} l dl / sqrt(2 pi l^3) = s sqrt(2 l_min / pi)`.
pub fn truncation_area_bound(l_min: f64, s: f64) -> Result<f64> {
    if !(l_min > 0.0 && l_min.is_finite()) {
        return Err(invalid("l_min must be positive"));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(invalid("s must be nonnegative"));
    }
    Ok(s * (2.0 * l_min / std::f64::consts::PI).sqrt())
}

fn check_window(s_max: f64, l_min: f64) -> Result<()> {
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(invalid("s_max must be positive"));
    }
    if !(l_min > 0.0 && l_min.is_finite()) {
        return Err(invalid("l_min must be positive"));
    }
    Ok(())
}

/// Poisson number of `(t, l)` pairs, `t` uniform on `[0, s_max]` and
/// `l = l_min / U^2` (so `P(l > x) = sqrt(l_min / x)`), sorted by `t`.
pub fn sample_jump_atoms<R: Rng + ?Sized>(s_max: f64, l_min: f64, rng: &mut R) -> Result<Vec<(f64, f64)>> {
    check_window(s_max, l_min)?;
    let mean = expected_atom_count(s_max, l_min);
    let count = Poisson::new(mean).map_err(|e| invalid(format!("atom count: {e}")))?.sample(rng) as usize;
    let mut atoms: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = s_max * rng.random::<f64>();
            // 1 - U lies in (0, 1]
            let u = 1.0 - rng.random::<f64>();
            (t, l_min / (u * u))
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(atoms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpAtom {
    pub t: f64,
    pub l: f64,
    /// Index into [`LimitJumpSet::samples`].
    pub ise_ref: usize,
}

/// Atoms of one limit path and the ISE densities they point to.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitJumpSet {
    pub s_max: f64,
    pub l_min: f64,
    pub atoms: Vec<JumpAtom>,
    pub samples: Vec<IseSample>,
}

/// Sample ISE densities `0..count` in parallel, sample `i` on the stream
/// `path ++ [i]`.
pub fn sample_ise_pool(
    offspring: &OffspringLaw,
    step: &StepLaw,
    n_ise: u64,
    grid_step: f64,
    count: usize,
    seed: u64,
    path: &[u64],
) -> Result<Vec<IseSample>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut key = path.to_vec();
            key.push(i as u64);
            ise_density_sample(offspring, step, n_ise, grid_step, &mut stream(seed, &key))
        })
        .collect()
}

impl LimitJumpSet {
    /// One path: atoms on stream `path ++ [0]`, fresh ISE densities on
    /// `path ++ [1, atom]`.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        offspring: &OffspringLaw,
        step: &StepLaw,
        s_max: f64,
        l_min: f64,
        n_ise: u64,
        grid_step: f64,
        seed: u64,
        path: &[u64],
    ) -> Result<Self> {
        let mut key = path.to_vec();
        key.push(0);
        let pairs = sample_jump_atoms(s_max, l_min, &mut stream(seed, &key))?;
        key.pop();
        key.push(1);
        let samples = sample_ise_pool(offspring, step, n_ise, grid_step, pairs.len(), seed, &key)?;
        let atoms = pairs.into_iter().enumerate().map(|(i, (t, l))| JumpAtom { t, l, ise_ref: i }).collect();
        Ok(LimitJumpSet { s_max, l_min, atoms, samples })
    }

    /// Atoms whose densities are drawn uniformly from a shared pool. The pool
    /// is stored with the set.
    pub fn sample_with_pool<R: Rng + ?Sized>(s_max: f64, l_min: f64, pool: &[IseSample], rng: &mut R) -> Result<Self> {
        let atoms = sample_pooled_atoms(s_max, l_min, pool.len(), rng)?;
        Ok(LimitJumpSet { s_max, l_min, atoms, samples: pool.to_vec() })
    }

    /// Sum of `l / sigma_nu^2` over atoms with `t <= s`: the total area of the
    /// assembled density.
    pub fn area(&self, sigma_nu_sq: f64, s: f64) -> f64 {
        self.atoms.iter().filter(|a| a.t <= s).map(|a| a.l).sum::<f64>() / sigma_nu_sq
    }

    /// Largest single-atom area `l / sigma_nu^2` up to time `s`.
    pub fn max_area(&self, sigma_nu_sq: f64, s: f64) -> f64 {
        self.atoms.iter().filter(|a| a.t <= s).map(|a| a.l).fold(0.0, f64::max) / sigma_nu_sq
    }

    /// JSON body `{s_max, l_min, atoms, ise_samples}` plus one `ise_XXXXX.csv`
    /// per density in `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut refs = Vec::with_capacity(self.samples.len());
        for (i, h) in self.samples.iter().enumerate() {
            let file = format!("ise_{i:05}.csv");
            h.write_csv(BufWriter::new(File::create(dir.join(&file))?))?;
            refs.push(IseRef { ise_ref: i, file, grid_step: h.grid_step, source_size: h.source_size });
        }
        let doc =
            LimitJumpSetDoc { s_max: self.s_max, l_min: self.l_min, atoms: self.atoms.clone(), ise_samples: refs };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(LIMIT_JSON))?), &doc)?;
        Ok(())
    }

    pub fn read_from_dir(dir: &Path) -> Result<Self> {
        let doc: LimitJumpSetDoc = serde_json::from_reader(BufReader::new(File::open(dir.join(LIMIT_JSON))?))?;
        let mut samples = Vec::with_capacity(doc.ise_samples.len());
        for (i, r) in doc.ise_samples.iter().enumerate() {
            if r.ise_ref != i {
                return Err(Error::Parse(format!("ISE sample {i} listed as {}", r.ise_ref)));
            }
            let mut h = IseSample::read_csv(BufReader::new(File::open(dir.join(&r.file))?), r.source_size)?;
            // the differenced abscissae can be off in the last bit
            h.grid_step = r.grid_step;
            samples.push(h);
        }
        Ok(LimitJumpSet { s_max: doc.s_max, l_min: doc.l_min, atoms: doc.atoms, samples })
    }
}

pub const LIMIT_JSON: &str = "limit_jumps.json";

#[derive(Debug, Serialize, Deserialize)]
struct IseRef {
    ise_ref: usize,
    file: String,
    grid_step: f64,
    source_size: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LimitJumpSetDoc {
    s_max: f64,
    l_min: f64,
    atoms: Vec<JumpAtom>,
    ise_samples: Vec<IseRef>,
}

/// Atoms pointing uniformly into a pool of `pool_len` densities.
pub fn sample_pooled_atoms<R: Rng + ?Sized>(
    s_max: f64,
    l_min: f64,
    pool_len: usize,
    rng: &mut R,
) -> Result<Vec<JumpAtom>> {
    if pool_len == 0 {
        return Err(invalid("ISE pool is empty"));
    }
    let pairs = sample_jump_atoms(s_max, l_min, rng)?;
    Ok(pairs.into_iter().map(|(t, l)| JumpAtom { t, l, ise_ref: rng.random_range(0..pool_len) }).collect())
}

/// `g_s` on a grid: the sum over atoms with `t <= s` of
/// `l^{3/4} h(l^{-1/4} (sigma_nu / sigma_F) x) / (sigma_nu sigma_F)`.
pub fn assemble_limit_density(
    set: &LimitJumpSet,
    sigma_nu_sq: f64,
    sigma_f_sq: f64,
    s: f64,
    grid: &Grid,
) -> Result<DensityCurve> {
    assemble_atoms(&set.atoms, &set.samples, sigma_nu_sq, sigma_f_sq, s, grid)
}

/// [`assemble_limit_density`] for atoms whose densities live elsewhere.
pub fn assemble_atoms(
    atoms: &[JumpAtom],
    samples: &[IseSample],
    sigma_nu_sq: f64,
    sigma_f_sq: f64,
    s: f64,
    grid: &Grid,
) -> Result<DensityCurve> {
    if !(sigma_nu_sq > 0.0 && sigma_f_sq > 0.0) {
        return Err(invalid("variances must be positive"));
    }
    let (sigma_nu, sigma_f) = (sigma_nu_sq.sqrt(), sigma_f_sq.sqrt());
    let xs = grid.points();
    let mut curve = DensityCurve::zeros(grid);
    for (k, atom) in atoms.iter().enumerate() {
        let h = samples.get(atom.ise_ref).ok_or(Error::MissingIseSample { atom: k, ise_ref: atom.ise_ref })?;
        if atom.t > s {
            continue;
        }
        let height = atom.l.powf(0.75) / (sigma_nu * sigma_f);
        let squeeze = atom.l.powf(-0.25) * sigma_nu / sigma_f;
        for (v, &x) in curve.values.iter_mut().zip(&xs) {
            *v += height * h.value_at(squeeze * x);
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::OccupationMeasure;

    fn tent() -> IseSample {
        IseSample::from_measure(&OccupationMeasure::root_only(), 1.0, 0.125).unwrap()
    }

    #[test]
    fn closed_forms() {
        assert!((expected_atom_count(1.0, 1.0) - 0.797_884_560_802_865_4).abs() < 1e-15);
        assert!((expected_atom_count(1.0, 1e-4) - 79.788_456_080_286_54).abs() < 1e-10);
        assert!((truncation_area_bound(std::f64::consts::FRAC_PI_2, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((truncation_area_bound(1e-6, 1.0).unwrap() - 7.978_845_608e-4).abs() < 1e-12);
        assert!(truncation_area_bound(1e-300, 1.0).unwrap() < 1e-149);
        assert!(truncation_area_bound(0.0, 1.0).is_err());
    }

    #[test]
    fn atom_count_and_sizes() {
        let mut rng = stream(31, &[]);
        let draws = 100_000;
        let mut total = 0usize;
        let (mut sizes, mut above) = (0usize, 0usize);
        for _ in 0..draws {
            let atoms = sample_jump_atoms(1.0, 1.0, &mut rng).unwrap();
            total += atoms.len();
            for &(t, l) in &atoms {
                assert!((0.0..=1.0).contains(&t) && l >= 1.0);
                sizes += 1;
                above += usize::from(l > 4.0);
            }
            assert!(atoms.windows(2).all(|w| w[0].0 <= w[1].0));
        }
        let mean = total as f64 / draws as f64;
        assert!((mean / expected_atom_count(1.0, 1.0) - 1.0).abs() < 0.01, "{mean}");
        let frac = above as f64 / sizes as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn empty_and_single_atom_paths() {
        let grid = Grid::symmetric(3.0, 0.01).unwrap();
        let empty = LimitJumpSet {
            s_max: 1.0,
            l_min: 1.0,
            atoms: vec![JumpAtom { t: 0.9, l: 2.0, ise_ref: 0 }],
            samples: vec![tent()],
        };
        let c = assemble_limit_density(&empty, 1.0, 2.0 / 3.0, 0.5, &grid).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        for (nu2, f2, l) in [(1.0, 2.0 / 3.0, 2.0), (2.0, 0.5, 0.3), (1.0, 1.0, 0.01)] {
            let set = LimitJumpSet { atoms: vec![JumpAtom { t: 0.0, l, ise_ref: 0 }], ..empty.clone() };
            let c = assemble_limit_density(&set, nu2, f2, 1.0, &Grid::symmetric(5.0, 0.0005).unwrap()).unwrap();
            let area = c.trapezoid();
            assert!((area - l / nu2).abs() < 1e-5 * l / nu2, "{area} vs {}", l / nu2);
            assert!((set.area(nu2, 1.0) - l / nu2).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_sample_is_reported() {
        let set = LimitJumpSet {
            s_max: 1.0,
            l_min: 1.0,
            atoms: vec![JumpAtom { t: 0.5, l: 2.0, ise_ref: 3 }],
            samples: vec![tent()],
        };
        let err = assemble_limit_density(&set, 1.0, 1.0, 1.0, &Grid::symmetric(1.0, 0.5).unwrap()).unwrap_err();
        assert!(matches!(err, Error::MissingIseSample { atom: 0, ise_ref: 3 }));
    }

    #[test]
    fn monotone_in_time_and_replayable() {
        let (nu, f) = (OffspringLaw::poisson1(), StepLaw::uniform3());
        let set = LimitJumpSet::sample(&nu, &f, 1.0, 1e-3, 2000, 0.05, 9, &[1]).unwrap();
        assert!(!set.atoms.is_empty());
        let grid = Grid::symmetric(2.0, 0.05).unwrap();
        let mut prev = DensityCurve::zeros(&grid);
        for k in 0..=10 {
            let c = assemble_limit_density(&set, 1.0, 2.0 / 3.0, k as f64 / 10.0, &grid).unwrap();
            assert!(c.values.iter().zip(&prev.values).all(|(a, b)| a >= b));
            prev = c;
        }
        let dir = tempfile::tempdir().unwrap();
        set.write_to_dir(dir.path()).unwrap();
        let back = LimitJumpSet::read_from_dir(dir.path()).unwrap();
        assert_eq!(back.atoms, set.atoms);
        let again = assemble_limit_density(&back, 1.0, 2.0 / 3.0, 1.0, &grid).unwrap();
        for (a, b) in again.values.iter().zip(&prev.values) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn pooled_atoms_reference_the_pool() {
        let pool = vec![tent(), tent()];
        let mut rng = stream(4, &[]);
        let set = LimitJumpSet::sample_with_pool(1.0, 1e-4, &pool, &mut rng).unwrap();
        assert!(set.atoms.iter().all(|a| a.ise_ref < 2));
        assert!(LimitJumpSet::sample_with_pool(1.0, 1e-4, &[], &mut rng).is_err());
    }
}
