use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use brw_core::ensemble::{CapPolicy, Grid};
use brw_core::tree::DEFAULT_VERTEX_CAP;
use brw_core::verify::VerifyConfig;
use brw_core::{LawSpec, OffspringLaw, StepLaw};
use serde::{Deserialize, Serialize};

/// Symmetric evaluation grid `[-x_max, x_max]` with spacing `stride / sqrt(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XGrid {
    pub x_max: f64,
    #[serde(default = "one")]
    pub stride: u64,
}

fn one() -> u64 {
    1
}

impl XGrid {
    pub fn grid(&self, n_scale: u64) -> brw_core::Result<Grid> {
        Grid::symmetric(self.x_max, self.stride as f64 / (n_scale as f64).sqrt())
    }
}

/// Everything a run needs; unset fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub offspring: LawSpec,
    pub step: LawSpec,
    #[serde(rename = "N")]
    pub n_scale: u64,
    pub s_grid: Vec<f64>,
    /// `None` covers the support of the sampled trees.
    pub x_grid: Option<XGrid>,
    pub l_min: f64,
    pub n_ise: u64,
    pub ise_grid_step: f64,
    /// Extra limit paths whose atom counts go into the limit-sample manifest.
    pub replicates: u64,
    pub output_dir: PathBuf,
    pub vertex_cap: u64,
    pub cap_policy: CapPolicy,
    /// Number of ranked jumps written by `jumps`.
    pub top_jumps: usize,
    /// Budgets for `verify`; seed and laws come from this config.
    pub verify: Option<VerifyConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 1,
            offspring: LawSpec::preset("poisson1"),
            step: LawSpec::preset("uniform3"),
            n_scale: 1000,
            s_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            x_grid: None,
            l_min: 1e-6,
            n_ise: 100_000,
            ise_grid_step: 0.05,
            replicates: 1000,
            output_dir: PathBuf::from("out"),
            vertex_cap: DEFAULT_VERTEX_CAP,
            cap_policy: CapPolicy::Abort,
            top_jumps: 10,
            verify: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn laws(&self) -> anyhow::Result<(OffspringLaw, StepLaw)> {
        let nu = OffspringLaw::from_spec(&self.offspring).context("offspring law")?;
        let f = StepLaw::from_spec(&self.step).context("step law")?;
        Ok((nu, f))
    }

    pub fn s_max(&self) -> f64 {
        self.s_grid.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.laws()?;
        if self.n_scale == 0 {
            bail!("N must be positive");
        }
        if self.s_grid.is_empty() {
            bail!("s_grid is empty");
        }
        if let Some(s) = self.s_grid.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            bail!("s_grid entries must be finite and nonnegative, got {s}");
        }
        if let Some(x) = &self.x_grid {
            if x.stride == 0 {
                bail!("x_grid.stride must be positive");
            }
            x.grid(self.n_scale).context("x_grid")?;
        }
        if !(self.l_min > 0.0 && self.l_min.is_finite()) {
            bail!("l_min must be positive");
        }
        if self.n_ise == 0 {
            bail!("n_ise must be positive");
        }
        if !(self.ise_grid_step > 0.0 && self.ise_grid_step.is_finite()) {
            bail!("ise_grid_step must be positive");
        }
        if self.replicates == 0 {
            bail!("replicates must be positive");
        }
        if self.vertex_cap == 0 {
            bail!("vertex_cap must be positive");
        }
        Ok(())
    }

    /// Budgets for `verify`, carrying this config's seed and laws.
    pub fn verify_config(&self) -> VerifyConfig {
        let mut v = self.verify.clone().unwrap_or_default();
        v.master_seed = self.master_seed;
        v.offspring = self.offspring.clone();
        v.step = self.step.clone();
        v
    }
}
