//! The rescaled occupation density of an ordered sequence of trees.
//!
//! With `X^m(x)` the number of vertices at site `x` among the first `m`
//! trees, the ensemble at scale `N` is the step process
//!
//! ```text
//! g^N_s(x) = N^{-3/2} X^{floor(sN)}(sqrt(N) x)
//! ```
//!
//! with `X` linearly interpolated between sites. Its total area is
//! `theta^N_s = A_{floor(sN)} / N^2`, `A_m` the number of vertices in the first
//! `m` trees, and its value at 0 is `I^N_s`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::stream;
use crate::tree::{LayeredSampler, OccupationMeasure};

/// Relative slack when flooring `s N`, so that e.g. `0.29 * 100` counts 29 trees.
const FLOOR_SLACK: f64 = 1e-9;
/// Tolerance, in lattice units, for grid points to count as lattice sites.
const ALIGN_TOL: f64 = 1e-6;

/// `floor(s N)`, robust to the rounding of `s`.
pub fn trees_at(s: f64, n_scale: u64) -> Result<usize> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(invalid(format!("time must be finite and nonnegative, got {s}")));
    }
    let raw = s * n_scale as f64;
    Ok((raw + FLOOR_SLACK * raw.max(1.0)).floor() as usize)
}

/// An arithmetic grid `start + j step`, `j < len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Grid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !start.is_finite() || !(step > 0.0 && step.is_finite()) || len == 0 {
            return Err(invalid(format!("bad grid start={start} step={step} len={len}")));
        }
        Ok(Grid { start, step, len })
    }

    /// `[-x_max, x_max]` with spacing `step`; `x_max` is rounded up to a
    /// whole number of steps.
    pub fn symmetric(x_max: f64, step: f64) -> Result<Self> {
        if !(x_max >= 0.0 && x_max.is_finite()) {
            return Err(invalid("x_max must be finite and nonnegative"));
        }
        let half = (x_max / step - ALIGN_TOL).ceil().max(0.0) as usize;
        Self::new(-(half as f64) * step, step, 2 * half + 1)
    }

    pub fn point(&self, j: usize) -> f64 {
        self.start + j as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.point(j)).collect()
    }

    /// First lattice site and stride of the grid at scale `N`, if every grid
    /// point is a site of the lattice with spacing `1/sqrt(N)`.
    pub fn lattice(&self, n_scale: u64) -> Result<(i64, i64)> {
        let root = (n_scale as f64).sqrt();
        let stride = self.step * root;
        let start = self.start * root;
        let (rs, rt) = (stride.round(), start.round());
        if rs < 1.0 || (stride - rs).abs() > ALIGN_TOL || (start - rt).abs() > ALIGN_TOL {
            return Err(Error::GridMisaligned(format!(
                "step * sqrt(N) = {stride}, start * sqrt(N) = {start}; both must be integers"
            )));
        }
        Ok((rt as i64, rs as i64))
    }
}

/// Values of a rescaled density on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl DensityCurve {
    pub fn zeros(grid: &Grid) -> Self {
        DensityCurve { x: grid.points(), values: vec![0.0; grid.len] }
    }

    /// Trapezoidal integral over the grid.
    pub fn trapezoid(&self) -> f64 {
        self.x.windows(2).zip(self.values.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum()
    }

    /// `x,value` lines after a header, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,value")?;
        for (x, v) in self.x.iter().zip(&self.values) {
            writeln!(out, "{x:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// One tree's contribution to the ensemble: a jump of `g^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpProfile {
    /// 1 for the largest tree.
    pub rank: usize,
    /// 1-based position of the tree in the ensemble.
    pub tree_index: usize,
    pub tree_size: u64,
    /// `tree_size / N^2`, the jump of `theta^N`.
    pub area: f64,
    /// `N^{-3/2} X(sqrt(N) x)` on the lattice covering the tree plus one site
    /// on each side.
    pub curve: DensityCurve,
}

impl JumpProfile {
    /// The jump seen at its own scale, `J(|J|^{1/4} y) / |J|^{3/4}`, which
    /// equals `n^{-3/4} X(n^{1/4} y)` for a tree of `n` vertices.
    pub fn rescaled(&self, tree: &OccupationMeasure, y_grid: &Grid) -> DensityCurve {
        let n = tree.total() as f64;
        let spread = n.powf(0.25);
        let scale = n.powf(-0.75);
        DensityCurve {
            x: y_grid.points(),
            values: y_grid.points().iter().map(|&y| scale * tree.interpolate(spread * y)).collect(),
        }
    }
}

/// What to do when a tree exceeds the vertex cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum CapPolicy {
    /// Fail the whole run.
    Abort,
    /// Redraw the tree from a fresh stream, at most this many times. Biases
    /// the ensemble against huge trees; every redraw is counted.
    Retry { max_attempts: u32 },
}

/// Trees sampled for an ensemble, plus the number of cap hits absorbed.
#[derive(Debug, Clone)]
pub struct SampledTrees {
    pub trees: Vec<OccupationMeasure>,
    pub cap_retries: u64,
}

/// Sample `count` labeled trees in parallel. Tree `i` (0-based) uses the
/// stream `path ++ [i, attempt]`, so the result does not depend on the
/// number of threads.
pub fn sample_trees(
    sampler: &LayeredSampler,
    count: usize,
    seed: u64,
    path: &[u64],
    vertex_cap: u64,
    policy: CapPolicy,
) -> Result<SampledTrees> {
    let results: Vec<Result<(OccupationMeasure, u64)>> = (0..count)
        .into_par_iter()
        .map_init(
            || sampler.clone(),
            |local, i| {
                let mut attempt = 0u32;
                loop {
                    let mut key = path.to_vec();
                    key.extend([i as u64, u64::from(attempt)]);
                    let mut rng = stream(seed, &key);
                    match local.sample(&mut rng, vertex_cap) {
                        Ok(tree) => return Ok((tree, u64::from(attempt))),
                        Err(e @ Error::VertexCapExceeded { .. }) => match policy {
                            CapPolicy::Retry { max_attempts } if attempt + 1 < max_attempts => attempt += 1,
                            _ => return Err(e),
                        },
                        Err(e) => return Err(e),
                    }
                }
            },
        )
        .collect();
    let mut trees = Vec::with_capacity(count);
    let mut cap_retries = 0;
    for r in results {
        let (tree, retries) = r?;
        trees.push(tree);
        cap_retries += retries;
    }
    Ok(SampledTrees { trees, cap_retries })
}

/// An ordered sequence of trees viewed at scale `N`.
#[derive(Debug, Clone)]
pub struct EnsembleProcess {
    n_scale: u64,
    trees: Vec<OccupationMeasure>,
    /// `A_m`, with `A_0 = 0`.
    cumulative_totals: Vec<u64>,
    /// Prefix sums of the counts at site 0.
    cumulative_zero: Vec<u64>,
}

impl EnsembleProcess {
    pub fn build(trees: Vec<OccupationMeasure>, n_scale: u64) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if n_scale == 0 {
            return Err(invalid("N must be at least 1"));
        }
        let mut cumulative_totals = Vec::with_capacity(trees.len() + 1);
        let mut cumulative_zero = Vec::with_capacity(trees.len() + 1);
        cumulative_totals.push(0);
        cumulative_zero.push(0);
        for t in &trees {
            cumulative_totals.push(cumulative_totals.last().unwrap() + t.total());
            cumulative_zero.push(cumulative_zero.last().unwrap() + t.count_at(0));
        }
        Ok(EnsembleProcess { n_scale, trees, cumulative_totals, cumulative_zero })
    }

    pub fn n_scale(&self) -> u64 {
        self.n_scale
    }

    pub fn trees(&self) -> &[OccupationMeasure] {
        &self.trees
    }

    /// `A_0 = 0, A_1, ..., A_{trees}`.
    pub fn cumulative_totals(&self) -> &[u64] {
        &self.cumulative_totals
    }

    /// Largest time whose trees are all stored.
    pub fn s_capacity(&self) -> f64 {
        self.trees.len() as f64 / self.n_scale as f64
    }

    fn trees_until(&self, s: f64) -> Result<usize> {
        let m = trees_at(s, self.n_scale)?;
        if m > self.trees.len() {
            return Err(Error::NotEnoughTrees { needed: m as u64, available: self.trees.len() as u64 });
        }
        Ok(m)
    }

    /// `theta^N_s = A_{floor(sN)} / N^2`, from the prefix sums.
    pub fn area_process(&self, s: f64) -> Result<f64> {
        let m = self.trees_until(s)?;
        let n = self.n_scale as f64;
        Ok(self.cumulative_totals[m] as f64 / (n * n))
    }

    /// `I^N_s = g^N_s(0)`, an exact lattice value.
    pub fn zero_process(&self, s: f64) -> Result<f64> {
        let m = self.trees_until(s)?;
        Ok(self.cumulative_zero[m] as f64 / (self.n_scale as f64).powf(1.5))
    }

    /// `g^N_s` on a grid whose points are lattice sites.
    pub fn eval_density(&self, s: f64, grid: &Grid) -> Result<DensityCurve> {
        Ok(self.eval_density_path(&[s], grid)?.pop().expect("one time in, one curve out"))
    }

    /// `g^N_s` for several times, accumulating trees once. Times may come in
    /// any order; curves are returned in the order given.
    pub fn eval_density_path(&self, times: &[f64], grid: &Grid) -> Result<Vec<DensityCurve>> {
        let (first, stride) = grid.lattice(self.n_scale)?;
        let ms = times.iter().map(|&s| self.trees_until(s)).collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by_key(|&i| ms[i]);
        let mut counts = vec![0u64; grid.len];
        let mut added = 0usize;
        let scale = (self.n_scale as f64).powf(-1.5);
        let mut curves = vec![DensityCurve::zeros(grid); times.len()];
        for i in order {
            while added < ms[i] {
                for &(site, c) in self.trees[added].counts() {
                    let offset = site - first;
                    if offset >= 0 && offset % stride == 0 {
                        let j = (offset / stride) as usize;
                        if j < grid.len {
                            counts[j] += c;
                        }
                    }
                }
                added += 1;
            }
            curves[i].values = counts.iter().map(|&c| c as f64 * scale).collect();
        }
        Ok(curves)
    }

    /// Lattice grid (spacing `1/sqrt(N)`) covering the first `floor(sN)`
    /// trees plus one site on each side.
    pub fn default_grid(&self, s: f64) -> Result<Grid> {
        let m = self.trees_until(s)?;
        let reach = self.trees[..m].iter().map(|t| t.min_site().abs().max(t.max_site().abs())).max().unwrap_or(0) + 1;
        let h = 1.0 / (self.n_scale as f64).sqrt();
        Grid::new(-(reach as f64) * h, h, 2 * reach as usize + 1)
    }

    /// The jump contributed by tree `index` (1-based), with `rank` left at 0.
    pub fn jump(&self, index: usize) -> Result<JumpProfile> {
        let tree =
            self.trees.get(index.wrapping_sub(1)).ok_or_else(|| invalid(format!("no tree with index {index}")))?;
        let n = self.n_scale as f64;
        let h = 1.0 / n.sqrt();
        let (lo, hi) = (tree.min_site() - 1, tree.max_site() + 1);
        let scale = n.powf(-1.5);
        let curve = DensityCurve {
            x: (lo..=hi).map(|z| z as f64 * h).collect(),
            values: (lo..=hi).map(|z| tree.count_at(z) as f64 * scale).collect(),
        };
        Ok(JumpProfile {
            rank: 0,
            tree_index: index,
            tree_size: tree.total(),
            area: tree.total() as f64 / (n * n),
            curve,
        })
    }

    /// The `m` largest trees among the first `floor(s_max N)`, by size, ties
    /// going to the earlier tree.
    pub fn ordered_jumps(&self, s_max: f64, m: usize) -> Result<Vec<JumpProfile>> {
        let available = self.trees_until(s_max)?;
        let mut order: Vec<usize> = (0..available).collect();
        order.sort_by(|&a, &b| self.trees[b].total().cmp(&self.trees[a].total()).then(a.cmp(&b)));
        order
            .into_iter()
            .take(m)
            .enumerate()
            .map(|(r, i)| {
                let mut jump = self.jump(i + 1)?;
                jump.rank = r + 1;
                Ok(jump)
            })
            .collect()
    }
}

/// Curves of one ensemble at several times, as a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySnapshot {
    pub n_scale: u64,
    pub curves: Vec<TimedCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedCurve {
    pub s: f64,
    pub curve: DensityCurve,
}

/// Header and rows of the jump summary table.
pub fn write_jump_table<W: Write>(jumps: &[JumpProfile], mut out: W) -> Result<()> {
    writeln!(out, "rank,area,tree_index,tree_size")?;
    for j in jumps {
        writeln!(out, "{},{:.16e},{},{}", j.rank, j.area, j.tree_index, j.tree_size)?;
    }
    Ok(())
}
