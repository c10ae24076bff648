//! Approximate samples of the integrated super-Brownian excursion density.
//!
//! The occupation measure `X` of a tree conditioned on `n` vertices, read as
//! `u(y) = n^{-3/4} X(n^{1/4} y)` with `X` linearly interpolated, converges
//! in law to `gamma f_ISE(gamma y)` with `gamma = sigma_nu^{1/2} / sigma_F`.
//! An [`IseSample`] stores `f(y) = u(y / gamma) / gamma` on a symmetric grid.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioned::sample_conditioned_occupation;
use crate::error::{invalid, Error, Result};
use crate::law::{OffspringLaw, StepLaw};
use crate::tree::OccupationMeasure;

/// `sigma_nu^{1/2} / sigma_F`.
pub fn ise_gamma(offspring: &OffspringLaw, step: &StepLaw) -> f64 {
    offspring.variance().powf(0.25) / step.variance().sqrt()
}

/// A density on the grid `y_j = (j - half) grid_step`, `j = 0..=2 half`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseSample {
    pub grid_step: f64,
    pub values: Vec<f64>,
    /// Size of the conditioned tree behind the sample.
    pub source_size: u64,
}

impl IseSample {
    pub fn new(grid_step: f64, values: Vec<f64>, source_size: u64) -> Result<Self> {
        if !(grid_step > 0.0 && grid_step.is_finite()) {
            return Err(invalid("grid_step must be positive"));
        }
        if values.len().is_multiple_of(2) {
            return Err(invalid("a symmetric grid has an odd number of points"));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("density values must be finite and nonnegative"));
        }
        if source_size == 0 {
            return Err(invalid("source_size must be positive"));
        }
        Ok(IseSample { grid_step, values, source_size })
    }

    /// Rescale a conditioned tree's occupation measure to unit mass and
    /// ISE units.
    pub fn from_measure(measure: &OccupationMeasure, gamma: f64, grid_step: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma must be positive"));
        }
        if !(grid_step > 0.0 && grid_step.is_finite()) {
            return Err(invalid("grid_step must be positive"));
        }
        let n = measure.total() as f64;
        let spread = n.powf(0.25);
        // X vanishes one site beyond its support
        let reach = (measure.min_site().abs().max(measure.max_site().abs()) + 1) as f64;
        let half = (gamma * reach / spread / grid_step).ceil() as usize + 1;
        let scale = n.powf(-0.75) / gamma;
        let values = (0..=2 * half)
            .map(|j| {
                let y = (j as f64 - half as f64) * grid_step;
                scale * measure.interpolate(spread * y / gamma)
            })
            .collect();
        Self::new(grid_step, values, measure.total())
    }

    pub fn half_width(&self) -> usize {
        self.values.len() / 2
    }

    pub fn y_at(&self, j: usize) -> f64 {
        (j as f64 - self.half_width() as f64) * self.grid_step
    }

    /// Linear interpolation on the grid, zero outside it.
    pub fn value_at(&self, y: f64) -> f64 {
        let pos = y / self.grid_step + self.half_width() as f64;
        if pos.is_nan() || pos < 0.0 || pos > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let j = pos.floor() as usize;
        let frac = pos - j as f64;
        if frac == 0.0 || j + 1 == self.values.len() {
            return self.values[j];
        }
        (1.0 - frac) * self.values[j] + frac * self.values[j + 1]
    }

    /// `grid_step * sum(values)`.
    pub fn mass(&self) -> f64 {
        self.grid_step * self.values.iter().sum::<f64>()
    }

    /// `grid_step * sum(y values)`.
    pub fn first_moment(&self) -> f64 {
        self.grid_step * self.values.iter().enumerate().map(|(j, v)| self.y_at(j) * v).sum::<f64>()
    }

    /// `y,value` lines after a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "y,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.y_at(j), v)?;
        }
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); the grid step is recovered
    /// from the first two abscissae.
    pub fn read_csv<R: BufRead>(input: R, source_size: u64) -> Result<Self> {
        let mut ys = Vec::new();
        let mut values = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "y,value" {
                    return Err(Error::Parse(format!("unexpected header `{line}`")));
                }
                continue;
            }
            let (y, v) = line.split_once(',').ok_or_else(|| Error::Parse(format!("line {}: `{line}`", i + 1)))?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)));
            ys.push(parse(y)?);
            values.push(parse(v)?);
        }
        if ys.len() < 3 {
            return Err(Error::Parse("an ISE grid needs at least three points".into()));
        }
        Self::new(ys[1] - ys[0], values, source_size)
    }
}

/// Draw a tree conditioned on `n` vertices and return its rescaled profile.
pub fn ise_density_sample<R: Rng + ?Sized>(
    offspring: &OffspringLaw,
    step: &StepLaw,
    n: u64,
    grid_step: f64,
    rng: &mut R,
) -> Result<IseSample> {
    let measure = sample_conditioned_occupation(offspring, step, n, rng)?;
    IseSample::from_measure(&measure, ise_gamma(offspring, step), grid_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn gamma_for_poisson_and_uniform_steps() {
        let g = ise_gamma(&OffspringLaw::poisson1(), &StepLaw::uniform3());
        assert!((g - 1.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn mass_is_one_and_ends_vanish() {
        let (nu, f) = (OffspringLaw::poisson1(), StepLaw::uniform3());
        let mut rng = stream(5, &[]);
        for n in [1u64, 10, 1000, 20_000] {
            for _ in 0..5 {
                let h = ise_density_sample(&nu, &f, n, 0.05, &mut rng).unwrap();
                assert!((h.mass() - 1.0).abs() <= 2.0 / (n as f64).sqrt(), "n={n}: {}", h.mass());
                assert_eq!(h.values[0], 0.0);
                assert_eq!(*h.values.last().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn single_vertex_is_a_tent() {
        let m = OccupationMeasure::root_only();
        let h = IseSample::from_measure(&m, 1.0, 0.25).unwrap();
        assert_eq!(h.value_at(0.0), 1.0);
        assert_eq!(h.value_at(0.5), 0.5);
        assert_eq!(h.value_at(-1.0), 0.0);
        assert_eq!(h.value_at(7.0), 0.0);
        assert!((h.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = stream(6, &[]);
        let h = ise_density_sample(&OffspringLaw::binary(), &StepLaw::lazy(), 101, 0.1, &mut rng).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let back = IseSample::read_csv(buf.as_slice(), 101).unwrap();
        assert_eq!(back.values, h.values);
        assert!((back.grid_step - h.grid_step).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(IseSample::new(0.0, vec![0.0], 1).is_err());
        assert!(IseSample::new(0.1, vec![0.0, 1.0], 1).is_err());
        assert!(IseSample::new(0.1, vec![0.0, -1.0, 0.0], 1).is_err());
        assert!(IseSample::from_measure(&OccupationMeasure::root_only(), 1.0, -0.1).is_err());
    }
}
