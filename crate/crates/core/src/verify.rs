//! Statistical checks of the scaling limits, run at desk scale.
//!
//! Every check draws from streams derived from the master seed and a fixed
//! per-check tag, and folds replicates by index, so the report body does not
//! depend on the thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::conditioned::{
    is_tree_encoding, sample_conditioned_encoding, sample_conditioned_occupation, DEFAULT_MAX_ROUNDS,
};
use crate::ensemble::{sample_trees, CapPolicy, EnsembleProcess, Grid};
use crate::error::{Error, Result};
use crate::ise::{ise_gamma, IseSample};
use crate::law::{LawSpec, OffspringLaw, StepLaw};
use crate::limit::{assemble_atoms, expected_atom_count, sample_ise_pool, sample_jump_atoms, sample_pooled_atoms};
use crate::rng::{derive_seed, stream};
use crate::stats::{
    default_k, hill_estimator, hill_sweep, ks_one_sample, ks_two_sample, levy_theta_cdf, srw_scaled_return_time,
};
use crate::tree::{
    complete_capped_size, sample_forest_size, survival_probability_estimate, survival_probability_exact,
    LayeredSampler, OccupationMeasure,
};

/// Pass condition on a check's statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Below(f64),
    AtMost(f64),
    Above(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Threshold {
    pub fn holds(&self, x: f64) -> bool {
        match *self {
            Threshold::Below(t) => x < t,
            Threshold::AtMost(t) => x <= t,
            Threshold::Above(t) => x > t,
            Threshold::AtLeast(t) => x >= t,
            Threshold::Within(lo, hi) => lo <= x && x <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub check_id: String,
    /// Acceptance criterion number.
    pub criterion: u8,
    /// The claim under test.
    pub paper_ref: String,
    pub statistic: f64,
    pub threshold: Threshold,
    pub pass: bool,
    pub seed: u64,
    pub n_used: u64,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub master_seed: u64,
    pub offspring: String,
    pub step: String,
    pub all_pass: bool,
    pub checks: Vec<Check>,
}

impl StatReport {
    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.check_id == id)
    }

    pub fn warnings(&self) -> impl Iterator<Item = (&str, &str)> {
        self.checks.iter().flat_map(|c| c.warnings.iter().map(move |w| (c.check_id.as_str(), w.as_str())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report without its timing fields; equal seeds give equal bodies.
    pub fn body_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(checks) = value.get_mut("checks").and_then(|c| c.as_array_mut()) {
            for c in checks {
                if let Some(obj) = c.as_object_mut() {
                    obj.remove("wall_time_s");
                }
            }
        }
        Ok(serde_json::to_string_pretty(&value)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KolmogorovBudget {
    pub generation: u32,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaLawBudget {
    pub n_scale: u64,
    pub replicates: usize,
    /// Returns to the origin per random-walk reference sample.
    pub walk_returns: u64,
    pub walk_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StableIndexBudget {
    pub n_scale: u64,
    pub ensembles: usize,
    pub vertex_cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingBudget {
    pub n_scale: u64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualPathBudget {
    pub n_scale: u64,
    pub replicates: usize,
    pub limit_draws: usize,
    pub l_min: f64,
    pub n_ise: u64,
    pub ise_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JumpShapeBudget {
    pub n_scale: u64,
    pub replicates: usize,
    pub vertex_cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvariantBudget {
    pub n_scale: u64,
    pub realizations: usize,
    pub conditioned_sizes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnumerationBudget {
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationBudget {
    pub hill_repetitions: usize,
    pub hill_samples: usize,
    pub atom_draws: usize,
    pub l_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeterminismBudget {
    pub thread_counts: Vec<usize>,
}

/// Budgets for every check. Unset fields take the defaults, which meet the
/// minimum budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub master_seed: u64,
    pub offspring: LawSpec,
    pub step: LawSpec,
    /// Replicates holding a single jump of area above `censor_area * s^2`
    /// are recorded as +inf on both sides of a comparison.
    pub censor_area: f64,
    pub kolmogorov: KolmogorovBudget,
    pub theta_law: ThetaLawBudget,
    pub stable_index: StableIndexBudget,
    pub scaling: ScalingBudget,
    pub dual_path: DualPathBudget,
    pub jump_shape: JumpShapeBudget,
    pub invariants: InvariantBudget,
    pub enumeration: EnumerationBudget,
    pub calibration: CalibrationBudget,
    pub determinism: DeterminismBudget,
}

impl Default for KolmogorovBudget {
    fn default() -> Self {
        KolmogorovBudget { generation: 200, trials: 100_000 }
    }
}

impl Default for ThetaLawBudget {
    fn default() -> Self {
        ThetaLawBudget { n_scale: 500, replicates: 2000, walk_returns: 2000, walk_samples: 4000 }
    }
}

impl Default for StableIndexBudget {
    fn default() -> Self {
        StableIndexBudget { n_scale: 1000, ensembles: 20, vertex_cap: 10_000_000_000 }
    }
}

impl Default for ScalingBudget {
    fn default() -> Self {
        ScalingBudget { n_scale: 500, replicates: 1500 }
    }
}

impl Default for DualPathBudget {
    fn default() -> Self {
        DualPathBudget {
            n_scale: 1000,
            replicates: 1000,
            limit_draws: 2000,
            l_min: 1e-6,
            n_ise: 100_000,
            ise_pool: 2048,
        }
    }
}

impl Default for JumpShapeBudget {
    fn default() -> Self {
        JumpShapeBudget { n_scale: 200, replicates: 1000, vertex_cap: 4_000_000 }
    }
}

impl Default for InvariantBudget {
    fn default() -> Self {
        InvariantBudget { n_scale: 200, realizations: 4, conditioned_sizes: vec![1, 2, 3, 7, 100, 1000, 10_000] }
    }
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { samples: 100_000 }
    }
}

impl Default for CalibrationBudget {
    fn default() -> Self {
        CalibrationBudget { hill_repetitions: 200, hill_samples: 10_000, atom_draws: 100_000, l_min: 1e-2 }
    }
}

impl Default for DeterminismBudget {
    fn default() -> Self {
        DeterminismBudget { thread_counts: vec![1, 4] }
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            master_seed: 20_240_601,
            offspring: LawSpec::preset("poisson1"),
            step: LawSpec::preset("uniform3"),
            censor_area: 1000.0,
            kolmogorov: KolmogorovBudget::default(),
            theta_law: ThetaLawBudget::default(),
            stable_index: StableIndexBudget::default(),
            scaling: ScalingBudget::default(),
            dual_path: DualPathBudget::default(),
            jump_shape: JumpShapeBudget::default(),
            invariants: InvariantBudget::default(),
            enumeration: EnumerationBudget::default(),
            calibration: CalibrationBudget::default(),
            determinism: DeterminismBudget::default(),
        }
    }
}

impl VerifyConfig {
    /// Set every ensemble scale `N` at once.
    pub fn with_scale(mut self, n_scale: u64) -> Self {
        self.theta_law.n_scale = n_scale;
        self.stable_index.n_scale = n_scale;
        self.scaling.n_scale = n_scale;
        self.dual_path.n_scale = n_scale;
        self.jump_shape.n_scale = n_scale;
        self.invariants.n_scale = n_scale;
        self
    }

    /// Tiny budgets for plumbing tests; every check runs and fails its
    /// budget requirement.
    pub fn smoke(master_seed: u64) -> Self {
        VerifyConfig {
            master_seed,
            censor_area: 100.0,
            kolmogorov: KolmogorovBudget { generation: 50, trials: 2000 },
            theta_law: ThetaLawBudget { n_scale: 40, replicates: 100, walk_returns: 100, walk_samples: 200 },
            stable_index: StableIndexBudget { n_scale: 60, ensembles: 4, vertex_cap: 1_000_000 },
            scaling: ScalingBudget { n_scale: 40, replicates: 60 },
            dual_path: DualPathBudget {
                n_scale: 40,
                replicates: 60,
                limit_draws: 60,
                l_min: 1e-3,
                n_ise: 500,
                ise_pool: 16,
            },
            jump_shape: JumpShapeBudget { n_scale: 20, replicates: 40, vertex_cap: 100_000 },
            invariants: InvariantBudget { n_scale: 20, realizations: 1, conditioned_sizes: vec![1, 5, 50] },
            enumeration: EnumerationBudget { samples: 2000 },
            calibration: CalibrationBudget { hill_repetitions: 20, hill_samples: 2000, atom_draws: 1000, l_min: 1e-2 },
            determinism: DeterminismBudget { thread_counts: vec![1, 2] },
            ..VerifyConfig::default()
        }
    }

    /// Budget shortfalls, keyed by check id.
    pub fn budget_shortfalls(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut need = |id: &'static str, ok: bool, what: String| {
            if !ok {
                out.push((id, what));
            }
        };
        let k = &self.kolmogorov;
        for id in ["kolmogorov_tail_poisson", "kolmogorov_tail_geometric"] {
            need(id, k.trials >= 100_000, format!("trials {} < 100000", k.trials));
            need(id, k.generation >= 200, format!("generation {} < 200", k.generation));
        }
        let t = &self.theta_law;
        need("theta_law", t.replicates >= 2000, format!("replicates {} < 2000", t.replicates));
        need("theta_law", t.n_scale >= 500, format!("N {} < 500", t.n_scale));
        need(
            "theta_law_reference",
            t.walk_returns >= 1000 && t.walk_samples >= 2000,
            format!("walk budget {} x {} < 1000 x 2000", t.walk_returns, t.walk_samples),
        );
        let s = &self.stable_index;
        for id in ["stable_index_area", "stable_index_zero"] {
            need(id, s.n_scale >= 1000, format!("N {} < 1000", s.n_scale));
            need(id, s.ensembles >= 20, format!("ensembles {} < 20", s.ensembles));
        }
        let c = &self.scaling;
        need("scaling_relation", c.replicates >= 1000, format!("replicates {} < 1000", c.replicates));
        need("scaling_relation", c.n_scale >= 500, format!("N {} < 500", c.n_scale));
        let d = &self.dual_path;
        need("dual_path_zero_value", d.replicates >= 1000, format!("replicates {} < 1000", d.replicates));
        need("dual_path_zero_value", d.limit_draws >= 1000, format!("limit draws {} < 1000", d.limit_draws));
        need("dual_path_zero_value", d.n_scale >= 1000, format!("N {} < 1000", d.n_scale));
        need("dual_path_zero_value", d.n_ise >= 100_000, format!("n_ise {} < 100000", d.n_ise));
        need("dual_path_zero_value", d.l_min <= 1e-6, format!("l_min {} > 1e-6", d.l_min));
        need("dual_path_zero_value", d.ise_pool >= 1000, format!("ISE pool {} < 1000", d.ise_pool));
        let j = &self.jump_shape;
        need("ise_jump_shape", j.replicates >= 500, format!("replicates {} < 500", j.replicates));
        need("ise_jump_shape", j.n_scale >= 100, format!("N {} < 100", j.n_scale));
        let i = &self.invariants;
        need("exact_invariants", i.realizations >= 1, "no realizations".into());
        need("exact_invariants", i.n_scale >= 100, format!("N {} < 100", i.n_scale));
        need(
            "small_tree_enumeration",
            self.enumeration.samples >= 100_000,
            format!("samples {} < 100000", self.enumeration.samples),
        );
        let h = &self.calibration;
        need("hill_calibration", h.hill_repetitions >= 200, format!("repetitions {} < 200", h.hill_repetitions));
        need("hill_calibration", h.hill_samples >= 5000, format!("samples {} < 5000", h.hill_samples));
        need("ppp_atom_count", h.atom_draws >= 100_000, format!("draws {} < 100000", h.atom_draws));
        let mut threads = self.determinism.thread_counts.clone();
        threads.sort_unstable();
        threads.dedup();
        need(
            "determinism",
            threads.len() >= 2 && threads[0] >= 1,
            "need at least two distinct positive thread counts".into(),
        );
        out
    }

    /// `Err(BudgetTooSmall)` on the first shortfall.
    pub fn validate(&self) -> Result<()> {
        match self.budget_shortfalls().into_iter().next() {
            None => Ok(()),
            Some((id, what)) => Err(Error::BudgetTooSmall(format!("{id}: {what}"))),
        }
    }
}

// Stream tags, one per check.
const TAG_KOLMOGOROV_POISSON: u64 = 1;
const TAG_KOLMOGOROV_GEOMETRIC: u64 = 2;
const TAG_THETA_REFERENCE: u64 = 3;
const TAG_THETA: u64 = 4;
const TAG_STABLE: u64 = 5;
const TAG_SCALING: u64 = 6;
const TAG_DUAL: u64 = 7;
const TAG_SHAPE: u64 = 8;
const TAG_INVARIANTS: u64 = 9;
const TAG_ENUMERATION: u64 = 10;
const TAG_HILL: u64 = 11;
const TAG_ATOMS: u64 = 12;
const TAG_DETERMINISM: u64 = 13;

struct Outcome {
    statistic: f64,
    n_used: u64,
    details: BTreeMap<String, f64>,
    warnings: Vec<String>,
    /// Extra condition beyond the threshold, e.g. an oracle cross-check.
    gate: bool,
}

impl Outcome {
    fn new(statistic: f64, n_used: u64) -> Self {
        Outcome { statistic, n_used, details: BTreeMap::new(), warnings: Vec::new(), gate: true }
    }

    fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

struct Spec {
    id: &'static str,
    criterion: u8,
    claim: &'static str,
    threshold: Threshold,
    tag: u64,
}

fn run_check(cfg: &VerifyConfig, spec: Spec, body: impl FnOnce(u64) -> Result<Outcome>) -> Check {
    let seed = derive_seed(cfg.master_seed, &[spec.tag]);
    let start = Instant::now();
    let result = body(seed);
    let wall_time_s = start.elapsed().as_secs_f64();
    let shortfalls: Vec<String> = cfg
        .budget_shortfalls()
        .into_iter()
        .filter(|(id, _)| *id == spec.id)
        .map(|(_, what)| format!("budget below minimum: {what}"))
        .collect();
    let (statistic, n_used, details, mut warnings, gate) = match result {
        Ok(o) => (o.statistic, o.n_used, o.details, o.warnings, o.gate),
        Err(e) => (f64::NAN, 0, BTreeMap::new(), vec![format!("experiment failed: {e}")], false),
    };
    let pass = gate && shortfalls.is_empty() && spec.threshold.holds(statistic);
    warnings.extend(shortfalls);
    Check {
        check_id: spec.id.to_string(),
        criterion: spec.criterion,
        paper_ref: spec.claim.to_string(),
        statistic,
        threshold: spec.threshold,
        pass,
        seed,
        n_used,
        wall_time_s,
        details,
        warnings,
    }
}

/// Run every check. Budget shortfalls and failed experiments are reported
/// as failing checks with warnings; only invalid laws are errors.
pub fn verify_suite(cfg: &VerifyConfig) -> Result<StatReport> {
    let offspring = OffspringLaw::from_spec(&cfg.offspring)?;
    let step = StepLaw::from_spec(&cfg.step)?;
    if cfg.censor_area.is_nan() || cfg.censor_area <= 0.0 {
        return Err(Error::InvalidArgument("censor_area must be positive".into()));
    }
    let sampler = LayeredSampler::new(&offspring, &step);
    let mut checks = Vec::new();

    checks.push(run_check(
        cfg,
        Spec {
            id: "kolmogorov_tail_poisson",
            criterion: 1,
            claim: "critical GW survival tail n P(zeta > n) -> 2 / sigma^2, Poisson(1)",
            threshold: Threshold::Within(1.7, 2.3),
            tag: TAG_KOLMOGOROV_POISSON,
        },
        |seed| kolmogorov_tail(&OffspringLaw::poisson1(), &cfg.kolmogorov, seed, false),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "kolmogorov_tail_geometric",
            criterion: 1,
            claim: "critical GW survival tail n P(zeta > n) -> 2 / sigma^2, geometric(1/2), exact 1/(n+1)",
            threshold: Threshold::Within(0.85, 1.15),
            tag: TAG_KOLMOGOROV_GEOMETRIC,
        },
        |seed| kolmogorov_tail(&OffspringLaw::geometric_half(), &cfg.kolmogorov, seed, true),
    ));
    let reference = run_check(
        cfg,
        Spec {
            id: "theta_law_reference",
            criterion: 2,
            claim: "closed-form law of the inverse local time matches a random-walk return-time simulation",
            threshold: Threshold::Above(0.001),
            tag: TAG_THETA_REFERENCE,
        },
        |seed| theta_reference(&cfg.theta_law, seed),
    );
    let reference_ok = reference.pass;
    checks.push(reference);
    checks.push(run_check(
        cfg,
        Spec {
            id: "theta_law",
            criterion: 2,
            claim: "total area at s = 1 converges to the inverse local time law scaled by 1/sigma^2",
            threshold: Threshold::Below(0.06),
            tag: TAG_THETA,
        },
        |seed| {
            let mut o = theta_law(&offspring, &cfg.theta_law, seed)?;
            if !reference_ok {
                o.gate = false;
                o.warnings.push("reference law failed its random-walk cross-check".into());
            }
            Ok(o)
        },
    ));
    // both indices come from one set of ensembles, sampled in the first check
    let mut stable: Option<std::result::Result<StableSamples, String>> = None;
    checks.push(run_check(
        cfg,
        Spec {
            id: "stable_index_area",
            criterion: 3,
            claim: "area process is a stable subordinator of index 1/2",
            threshold: Threshold::Within(0.44, 0.56),
            tag: TAG_STABLE,
        },
        |seed| {
            let sampled = stable_index_samples(&sampler, &cfg.stable_index, seed).map_err(|e| e.to_string());
            let sampled = stable.insert(sampled);
            let s = sampled.as_ref().map_err(|e| Error::InvalidArgument(e.clone()))?;
            hill_outcome(&s.area_jumps, s.capped)
        },
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "stable_index_zero",
            criterion: 3,
            claim: "value at the origin is a stable subordinator of index 2/3",
            threshold: Threshold::Within(0.57, 0.77),
            tag: TAG_STABLE,
        },
        |_| {
            let s = stable
                .as_ref()
                .expect("sampled by the previous check")
                .as_ref()
                .map_err(|e| Error::InvalidArgument(e.clone()))?;
            hill_outcome(&s.zero_jumps, s.capped)
        },
    ));
    drop(stable);
    checks.push(run_check(
        cfg,
        Spec {
            id: "scaling_relation",
            criterion: 4,
            claim: "g_s(0) and s^{3/2} g_1(0) have the same law",
            threshold: Threshold::Below(0.06),
            tag: TAG_SCALING,
        },
        |seed| scaling_relation(&sampler, &cfg.scaling, cfg.censor_area, seed),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "dual_path_zero_value",
            criterion: 5,
            claim: "ensemble value at the origin matches the limit assembled from jumps and ISE densities",
            threshold: Threshold::Below(0.08),
            tag: TAG_DUAL,
        },
        |seed| dual_path(&sampler, &cfg.dual_path, cfg.censor_area, seed),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "ise_jump_shape",
            criterion: 6,
            claim: "rescaled largest jump at the origin matches a size-conditioned tree of the same size",
            threshold: Threshold::Below(0.1),
            tag: TAG_SHAPE,
        },
        |seed| jump_shape(&sampler, &cfg.jump_shape, seed),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "exact_invariants",
            criterion: 7,
            claim: "monotone pure-jump paths, exact area identity, exact conditioned sizes, valid rotations",
            threshold: Threshold::AtMost(0.0),
            tag: TAG_INVARIANTS,
        },
        |seed| invariants(&sampler, &cfg.invariants, seed),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "small_tree_enumeration",
            criterion: 8,
            claim: "size-conditioned binary trees with at most 5 vertices match brute-force enumeration",
            threshold: Threshold::Above(0.001),
            tag: TAG_ENUMERATION,
        },
        |seed| small_tree_enumeration(&step, cfg.enumeration.samples, seed),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "hill_calibration",
            criterion: 9,
            claim: "Hill 95% band covers the true index on exact Pareto(1/2) and Pareto(2/3) samples",
            threshold: Threshold::AtLeast(0.9),
            tag: TAG_HILL,
        },
        |seed| hill_calibration(&cfg.calibration, seed),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "ppp_atom_count",
            criterion: 9,
            claim: "mean atom count of the truncated jump point process is s_max sqrt(2 / (pi l_min))",
            threshold: Threshold::Below(0.01),
            tag: TAG_ATOMS,
        },
        |seed| atom_count(&cfg.calibration, seed),
    ));
    checks.push(run_check(
        cfg,
        Spec {
            id: "determinism",
            criterion: 10,
            claim: "results depend on the master seed only, not on the thread count",
            threshold: Threshold::AtMost(0.0),
            tag: TAG_DETERMINISM,
        },
        |seed| determinism(&offspring, &step, &cfg.determinism, seed),
    ));

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(StatReport {
        master_seed: cfg.master_seed,
        offspring: offspring.name().to_string(),
        step: step.name().to_string(),
        all_pass,
        checks,
    })
}

fn kolmogorov_tail(offspring: &OffspringLaw, b: &KolmogorovBudget, seed: u64, gate_on_exact: bool) -> Result<Outcome> {
    // split the trials over fixed chunks so the estimate is thread-independent
    const CHUNKS: u64 = 64;
    let n = b.generation;
    let alive: u64 = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let trials = b.trials / CHUNKS + u64::from(c < b.trials % CHUNKS);
            if trials == 0 {
                return Ok(0);
            }
            let p = survival_probability_estimate(offspring, n, trials, &mut stream(seed, &[c]))?;
            Ok((p * trials as f64).round() as u64)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    let p_hat = alive as f64 / b.trials as f64;
    let exact = survival_probability_exact(offspring, n);
    let se = (exact * (1.0 - exact) / b.trials as f64).sqrt();
    let z = (p_hat - exact) / se;
    let mut o = Outcome::new(n as f64 * p_hat, b.trials)
        .detail("p_hat", p_hat)
        .detail("exact_iterated_pgf", exact)
        .detail("z_vs_exact", z)
        .detail("limit_2_over_sigma_sq", 2.0 / offspring.variance());
    if gate_on_exact {
        // geometric(1/2) has the closed form P(Z_n > 0) = 1 / (n + 1)
        let closed = 1.0 / (f64::from(n) + 1.0);
        o = o.detail("exact_closed_form", closed);
        if (closed - exact).abs() > 1e-12 || z.abs() > 4.0 {
            o.gate = false;
            o.warnings.push(format!("estimate disagrees with the exact recursion: z = {z:.2}"));
        }
    }
    Ok(o)
}

fn theta_reference(b: &ThetaLawBudget, seed: u64) -> Result<Outcome> {
    let samples = (0..b.walk_samples)
        .into_par_iter()
        .map(|i| srw_scaled_return_time(b.walk_returns, &mut stream(seed, &[i as u64])))
        .collect::<Result<Vec<f64>>>()?;
    let ks = ks_one_sample(&samples, |t| levy_theta_cdf(1.0, 1.0, t).unwrap_or(0.0))?;
    Ok(Outcome::new(ks.p_value, samples.len() as u64).detail("d_stat", ks.d_stat))
}

fn theta_law(offspring: &OffspringLaw, b: &ThetaLawBudget, seed: u64) -> Result<Outcome> {
    let n = b.n_scale;
    let sigma_sq = offspring.variance();
    let thetas: Vec<f64> = (0..b.replicates)
        .into_par_iter()
        .map(|r| sample_forest_size(offspring, n, &mut stream(seed, &[r as u64])) as f64 / (n as f64 * n as f64))
        .collect();
    let ks = ks_one_sample(&thetas, |t| levy_theta_cdf(1.0, sigma_sq, t).unwrap_or(0.0))?;
    let mut sorted = thetas.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(Outcome::new(ks.d_stat, thetas.len() as u64)
        .detail("p_value", ks.p_value)
        .detail("median", sorted[sorted.len() / 2]))
}

struct StableSamples {
    area_jumps: Vec<f64>,
    zero_jumps: Vec<f64>,
    capped: u64,
}

fn stable_index_samples(sampler: &LayeredSampler, b: &StableIndexBudget, seed: u64) -> Result<StableSamples> {
    let n = b.n_scale;
    let count = b.ensembles * n as usize;
    // tree i of ensemble e sits at index e N + i
    let per_tree: Vec<Result<(u64, Option<u64>)>> = (0..count)
        .into_par_iter()
        .map_init(
            || sampler.clone(),
            |local, i| {
                let mut rng = stream(seed, &[i as u64]);
                match local.sample(&mut rng, b.vertex_cap) {
                    Ok(tree) => Ok((tree.total(), Some(tree.count_at(0)))),
                    Err(e) => match complete_capped_size(&e, local.offspring(), &mut rng) {
                        Some(size) => Ok((size, None)),
                        None => Err(e),
                    },
                }
            },
        )
        .collect();
    let (nf, mut capped) = (n as f64, 0u64);
    let mut area_jumps = Vec::with_capacity(count);
    let mut zero_jumps = Vec::with_capacity(count);
    for r in per_tree {
        let (size, zero) = r?;
        area_jumps.push(size as f64 / (nf * nf));
        match zero {
            Some(z) => zero_jumps.push(z as f64 / nf.powf(1.5)),
            None => capped += 1,
        }
    }
    Ok(StableSamples { area_jumps, zero_jumps, capped })
}

fn hill_outcome(jumps: &[f64], capped: u64) -> Result<Outcome> {
    let k = default_k(jumps.len());
    let est = hill_estimator(jumps, k)?;
    let mut o = Outcome::new(est.alpha_hat, jumps.len() as u64)
        .detail("k", k as f64)
        .detail("ci_low", est.ci_low)
        .detail("ci_high", est.ci_high)
        .detail("capped_trees_without_site_counts", capped as f64);
    for e in hill_sweep(jumps)? {
        o = o.detail(&format!("alpha_hat_k{}", e.k_used), e.alpha_hat);
    }
    Ok(o)
}

/// `N^{-3/2} sum_{i < trees} X_i(0)` on the streams `path ++ [i]`, or +inf
/// if some tree exceeds `censor_vertices`.
fn zero_value_replicate(
    sampler: &mut LayeredSampler,
    trees: usize,
    n_scale: u64,
    censor_vertices: u64,
    seed: u64,
    path: &[u64],
) -> Result<f64> {
    let mut key = path.to_vec();
    key.push(0);
    let last = key.len() - 1;
    let mut at_zero = 0u64;
    for i in 0..trees {
        key[last] = i as u64;
        match sampler.sample(&mut stream(seed, &key), censor_vertices) {
            Ok(tree) => at_zero += tree.count_at(0),
            Err(Error::VertexCapExceeded { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(at_zero as f64 / (n_scale as f64).powf(1.5))
}

fn censor_vertices(censor_area: f64, trees: usize) -> u64 {
    let v = censor_area * (trees as f64) * (trees as f64);
    v.min(u64::MAX as f64 / 2.0).floor() as u64
}

fn zero_value_sample(
    sampler: &LayeredSampler,
    replicates: usize,
    trees: usize,
    n_scale: u64,
    censor_area: f64,
    seed: u64,
    side: u64,
) -> Result<Vec<f64>> {
    let cap = censor_vertices(censor_area, trees);
    (0..replicates)
        .into_par_iter()
        .map_init(
            || sampler.clone(),
            |local, r| zero_value_replicate(local, trees, n_scale, cap, seed, &[side, r as u64]),
        )
        .collect()
}

fn censored_fraction(v: &[f64]) -> f64 {
    v.iter().filter(|x| x.is_infinite()).count() as f64 / v.len().max(1) as f64
}

fn scaling_relation(sampler: &LayeredSampler, b: &ScalingBudget, censor_area: f64, seed: u64) -> Result<Outcome> {
    let n = b.n_scale;
    let quarter = (n / 4) as usize;
    if quarter == 0 {
        return Err(Error::InvalidArgument("N must be at least 4".into()));
    }
    // g_{1/4}(0) uses floor(N/4) trees; the factor 4^{3/2} = 8 undoes the scaling
    let short: Vec<f64> = zero_value_sample(sampler, b.replicates, quarter, n, censor_area, seed, 0)?
        .into_iter()
        .map(|v| 8.0 * v)
        .collect();
    let full = zero_value_sample(sampler, b.replicates, n as usize, n, censor_area, seed, 1)?;
    let ks = ks_two_sample(&short, &full)?;
    Ok(Outcome::new(ks.d_stat, (short.len() + full.len()) as u64)
        .detail("p_value", ks.p_value)
        .detail("censored_fraction_quarter", censored_fraction(&short))
        .detail("censored_fraction_one", censored_fraction(&full)))
}

fn dual_path(sampler: &LayeredSampler, b: &DualPathBudget, censor_area: f64, seed: u64) -> Result<Outcome> {
    let (nu, f) = (sampler.offspring(), sampler.step());
    let (nu2, f2) = (nu.variance(), f.variance());
    let ensemble = zero_value_sample(sampler, b.replicates, b.n_scale as usize, b.n_scale, censor_area, seed, 0)?;
    // only h(0) enters g_1(0), but the pool holds whole densities
    let pool: Vec<IseSample> = sample_ise_pool(nu, f, b.n_ise, 0.05, b.ise_pool, seed, &[1])?;
    let origin = Grid::new(0.0, 1.0, 1)?;
    let limit = (0..b.limit_draws)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, &[2, r as u64]);
            let atoms = sample_pooled_atoms(1.0, b.l_min, pool.len(), &mut rng)?;
            if atoms.iter().any(|a| a.l / nu2 > censor_area) {
                return Ok(f64::INFINITY);
            }
            Ok(assemble_atoms(&atoms, &pool, nu2, f2, 1.0, &origin)?.values[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    let ks = ks_two_sample(&ensemble, &limit)?;
    let mean_h0 = pool.iter().map(|h| h.value_at(0.0)).sum::<f64>() / pool.len() as f64;
    Ok(Outcome::new(ks.d_stat, (ensemble.len() + limit.len()) as u64)
        .detail("p_value", ks.p_value)
        .detail("censored_fraction_ensemble", censored_fraction(&ensemble))
        .detail("censored_fraction_limit", censored_fraction(&limit))
        .detail("pool_mean_h0", mean_h0))
}

fn jump_shape(sampler: &LayeredSampler, b: &JumpShapeBudget, seed: u64) -> Result<Outcome> {
    let (nu, f) = (sampler.offspring(), sampler.step());
    let gamma = ise_gamma(nu, f);
    let rescaled = |m: &OccupationMeasure| (m.total() as f64).powf(-0.75) * m.count_at(0) as f64 / gamma;
    let pairs = (0..b.replicates)
        .into_par_iter()
        .map_init(
            || sampler.clone(),
            |local, r| -> Result<Option<(f64, f64, u64)>> {
                let mut largest: Option<OccupationMeasure> = None;
                for i in 0..b.n_scale {
                    let mut rng = stream(seed, &[0, r as u64, i]);
                    match local.sample(&mut rng, b.vertex_cap) {
                        // the largest tree is over the cap; its size is unknown
                        Err(Error::VertexCapExceeded { .. }) => return Ok(None),
                        Err(e) => return Err(e),
                        Ok(t) => {
                            if largest.as_ref().is_none_or(|l| t.total() > l.total()) {
                                largest = Some(t);
                            }
                        }
                    }
                }
                let largest = largest.ok_or(Error::EmptyEnsemble)?;
                let n = largest.total();
                let oracle = sample_conditioned_occupation(nu, f, n, &mut stream(seed, &[1, r as u64]))?;
                Ok(Some((rescaled(&largest), rescaled(&oracle), n)))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<(f64, f64, u64)> = pairs.iter().flatten().copied().collect();
    let skipped = pairs.len() - kept.len();
    let ensemble: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let oracle: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let ks = ks_two_sample(&ensemble, &oracle)?;
    let mut sizes: Vec<u64> = kept.iter().map(|p| p.2).collect();
    sizes.sort_unstable();
    let mut o = Outcome::new(ks.d_stat, kept.len() as u64)
        .detail("p_value", ks.p_value)
        .detail("skipped_over_cap", skipped as f64)
        .detail("median_size", sizes.get(sizes.len() / 2).copied().unwrap_or(0) as f64);
    if kept.len() < b.replicates.min(500) {
        o.warnings.push(format!("only {} replicates below the cap", kept.len()));
        o.gate = false;
    }
    Ok(o)
}

fn invariants(sampler: &LayeredSampler, b: &InvariantBudget, seed: u64) -> Result<Outcome> {
    let mut violations: Vec<String> = Vec::new();
    let mut checked = 0u64;
    for r in 0..b.realizations {
        let trees = sample_trees(sampler, b.n_scale as usize, seed, &[0, r as u64], u64::MAX, CapPolicy::Abort)?.trees;
        let process = EnsembleProcess::build(trees, b.n_scale)?;
        checked += 1;
        violations.extend(ensemble_identity_violations(&process)?.into_iter().map(|v| format!("realization {r}: {v}")));
    }
    let nu = sampler.offspring();
    let laws = [nu.clone(), OffspringLaw::binary()];
    for (li, law) in laws.iter().enumerate() {
        for (si, &n) in b.conditioned_sizes.iter().enumerate() {
            if !crate::conditioned::size_is_feasible(law, n) {
                continue;
            }
            let mut rng = stream(seed, &[1, li as u64, si as u64]);
            let counts = sample_conditioned_encoding(law, n, DEFAULT_MAX_ROUNDS, &mut rng)?;
            checked += 1;
            if counts.len() as u64 != n {
                violations.push(format!("{}: conditioned size {} != {n}", law.name(), counts.len()));
            }
            if !is_tree_encoding(&counts) {
                violations.push(format!("{}: rotation of size {n} is not a tree", law.name()));
            }
            let measure = crate::conditioned::label_encoding(&counts, sampler.step(), &mut rng)?;
            if measure.total() != n {
                violations.push(format!("{}: labeled size {} != {n}", law.name(), measure.total()));
            }
        }
    }
    let mut o = Outcome::new(violations.len() as f64, checked);
    o.warnings = violations.into_iter().take(20).collect();
    Ok(o)
}

/// Violations of the exact identities for one ensemble over `s = k / N`.
pub fn ensemble_identity_violations(process: &EnsembleProcess) -> Result<Vec<String>> {
    let n = process.n_scale();
    let m = process.trees().len();
    let s_end = m as f64 / n as f64;
    let grid = process.default_grid(s_end)?;
    let times: Vec<f64> = (0..=m).map(|k| k as f64 / n as f64).collect();
    let curves = process.eval_density_path(&times, &grid)?;
    let h = 1.0 / (n as f64).sqrt();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    for (k, c) in curves.iter().enumerate() {
        if k > 0 && c.values.iter().zip(&curves[k - 1].values).any(|(a, b)| a < b) {
            out.push(format!("not monotone at s = {k}/{n}"));
        }
        let theta = process.area_process(times[k])?;
        let lattice = h * c.values.iter().sum::<f64>();
        if !close(lattice, theta) {
            out.push(format!("area identity at s = {k}/{n}: {lattice} vs {theta}"));
        }
    }
    // rebuild the last curve from the single-tree jumps
    let xs = grid.points();
    let mut rebuilt = vec![0.0; grid.len];
    for i in 1..=m {
        let jump = process.jump(i)?;
        for (x, v) in jump.curve.x.iter().zip(&jump.curve.values) {
            let j = ((x - grid.start) / grid.step).round();
            if j >= 0.0 && (j as usize) < grid.len && (xs[j as usize] - x).abs() < 1e-9 * grid.step {
                rebuilt[j as usize] += v;
            } else if *v != 0.0 {
                out.push(format!("jump {i} has mass off the grid at x = {x}"));
            }
        }
    }
    let last = curves.last().expect("at least the s = 0 curve");
    if rebuilt.iter().zip(&last.values).any(|(a, b)| !close(*a, *b)) {
        out.push("pure-jump reconstruction differs from g".into());
    }
    Ok(out)
}

/// Depth-first offspring sequences of every plane tree with `n` vertices and
/// degrees in `support`, by direct extension of valid prefixes.
pub fn enumerate_plane_trees(support: &[u32], n: usize) -> Vec<Vec<u32>> {
    fn extend(support: &[u32], n: usize, open: i64, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n {
            if open == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for &k in support {
            // `open` counts vertices announced but not yet placed
            let next = open - 1 + i64::from(k);
            let remaining = (n - prefix.len() - 1) as i64;
            if next < 0 || next > remaining || (next == 0 && remaining > 0) {
                continue;
            }
            prefix.push(k);
            extend(support, n, next, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        let mut prefix = Vec::with_capacity(n);
        // the root is announced up front
        for &k in support {
            let open = i64::from(k);
            let remaining = (n - 1) as i64;
            if open > remaining || (open == 0 && remaining > 0) {
                continue;
            }
            prefix.push(k);
            extend(support, n, open, &mut prefix, &mut out);
            prefix.pop();
        }
    }
    out
}

/// Occupation counts of a labeled plane tree: `steps[v]` is the displacement
/// of vertex `v` (in depth-first order) from its parent.
fn occupation_of(encoding: &[u32], steps: &[i64]) -> Vec<(i64, u64)> {
    // parent of each vertex, from a recursive descent
    fn descend(encoding: &[u32], at: &mut usize, site: i64, steps: &[i64], sites: &mut BTreeMap<i64, u64>) {
        let me = *at;
        *sites.entry(site).or_insert(0) += 1;
        *at += 1;
        for _ in 0..encoding[me] {
            let child_site = site + steps[*at];
            descend(encoding, at, child_site, steps, sites);
        }
    }
    let mut sites = BTreeMap::new();
    let mut at = 0;
    descend(encoding, &mut at, 0, steps, &mut sites);
    sites.into_iter().collect()
}

/// Probability of each depth-first offspring sequence.
pub type ShapeLaw = BTreeMap<Vec<u32>, f64>;
/// Probability of each occupation measure, as sorted `(site, count)` pairs.
pub type MeasureLaw = BTreeMap<Vec<(i64, u64)>, f64>;

/// Exact laws of the shape and of the occupation measure of a tree
/// conditioned on `n` vertices.
pub fn enumerate_conditioned_laws(offspring: &OffspringLaw, step: &StepLaw, n: usize) -> (ShapeLaw, MeasureLaw) {
    let support: Vec<u32> = offspring.pmf().iter().map(|e| e.0).collect();
    let mut shapes = BTreeMap::new();
    let mut measures = BTreeMap::new();
    for encoding in enumerate_plane_trees(&support, n) {
        let weight: f64 = encoding.iter().map(|&k| offspring.prob(k)).product();
        *shapes.entry(encoding.clone()).or_insert(0.0) += weight;
        // all labelings of the n - 1 edges
        let mut steps = vec![0i64; n];
        let pmf = step.pmf();
        let mut digits = vec![0usize; n.saturating_sub(1)];
        loop {
            let mut w = weight;
            for (v, &d) in digits.iter().enumerate() {
                steps[v + 1] = pmf[d].0;
                w *= pmf[d].1;
            }
            *measures.entry(occupation_of(&encoding, &steps)).or_insert(0.0) += w;
            let mut pos = 0;
            loop {
                if pos == digits.len() {
                    break;
                }
                digits[pos] += 1;
                if digits[pos] < pmf.len() {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
            if pos == digits.len() {
                break;
            }
        }
    }
    fn normalize<K>(m: &mut BTreeMap<K, f64>) {
        let total: f64 = m.values().sum();
        m.values_mut().for_each(|v| *v /= total);
    }
    normalize(&mut shapes);
    normalize(&mut measures);
    (shapes, measures)
}

/// Pearson chi-square p-value of observed counts against exact
/// probabilities. Cells with expected count below 5 are pooled; outcomes
/// outside the support give p = 0.
pub fn chi_square_p_value<K: Ord>(observed: &BTreeMap<K, u64>, law: &BTreeMap<K, f64>) -> Result<(f64, usize)> {
    let total: u64 = observed.values().sum();
    if total == 0 {
        return Err(Error::EmptySample);
    }
    if observed.keys().any(|k| !law.contains_key(k)) {
        return Ok((0.0, law.len()));
    }
    let t = total as f64;
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (k, &p) in law {
        let o = observed.get(k).copied().unwrap_or(0) as f64;
        let e = p * t;
        if e < 5.0 {
            pooled_obs += o;
            pooled_exp += e;
        } else {
            stat += (o - e) * (o - e) / e;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
        cells += 1;
    }
    if cells < 2 {
        return Ok((1.0, cells));
    }
    let dist = ChiSquared::new((cells - 1) as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((dist.sf(stat), cells))
}

fn small_tree_enumeration(step: &StepLaw, samples: u64, seed: u64) -> Result<Outcome> {
    let binary = OffspringLaw::binary();
    let mut o = Outcome::new(1.0, 0);
    let mut min_p = 1.0f64;
    for (ti, n) in [3usize, 5].into_iter().enumerate() {
        let (shape_law, measure_law) = enumerate_conditioned_laws(&binary, step, n);
        let mut shapes = BTreeMap::new();
        let mut measures = BTreeMap::new();
        let mut rng = stream(seed, &[ti as u64]);
        for _ in 0..samples {
            let counts = sample_conditioned_encoding(&binary, n as u64, DEFAULT_MAX_ROUNDS, &mut rng)?;
            let labeled = crate::conditioned::label_encoding(&counts, step, &mut rng)?;
            *measures.entry(labeled.counts().to_vec()).or_insert(0u64) += 1;
            *shapes.entry(counts).or_insert(0u64) += 1;
        }
        let (p_shape, c_shape) = chi_square_p_value(&shapes, &shape_law)?;
        let (p_measure, c_measure) = chi_square_p_value(&measures, &measure_law)?;
        o = o
            .detail(&format!("p_shape_n{n}"), p_shape)
            .detail(&format!("cells_shape_n{n}"), c_shape as f64)
            .detail(&format!("p_occupation_n{n}"), p_measure)
            .detail(&format!("cells_occupation_n{n}"), c_measure as f64);
        min_p = min_p.min(p_shape).min(p_measure);
        o.n_used += samples;
    }
    o.statistic = min_p;
    Ok(o)
}

fn hill_calibration(b: &CalibrationBudget, seed: u64) -> Result<Outcome> {
    let k = default_k(b.hill_samples);
    let mut o = Outcome::new(1.0, 0).detail("k", k as f64);
    let mut worst = 1.0f64;
    for (ai, alpha) in [0.5f64, 2.0 / 3.0].into_iter().enumerate() {
        let covered = (0..b.hill_repetitions)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(seed, &[ai as u64, r as u64]);
                let draws: Vec<f64> = (0..b.hill_samples)
                    .map(|_| (1.0 - rand::Rng::random::<f64>(&mut rng)).powf(-1.0 / alpha))
                    .collect();
                Ok(hill_estimator(&draws, k)?.covers(alpha))
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .filter(|&c| c)
            .count();
        let coverage = covered as f64 / b.hill_repetitions.max(1) as f64;
        o = o.detail(&format!("coverage_alpha_{alpha:.4}"), coverage);
        worst = worst.min(coverage);
        o.n_used += b.hill_repetitions as u64;
    }
    o.statistic = worst;
    Ok(o)
}

fn atom_count(b: &CalibrationBudget, seed: u64) -> Result<Outcome> {
    const CHUNKS: usize = 64;
    let counts = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[c as u64]);
            let draws = b.atom_draws / CHUNKS + usize::from(c < b.atom_draws % CHUNKS);
            let mut total = 0usize;
            for _ in 0..draws {
                total += sample_jump_atoms(1.0, b.l_min, &mut rng)?.len();
            }
            Ok(total)
        })
        .collect::<Result<Vec<usize>>>()?;
    let mean = counts.iter().sum::<usize>() as f64 / b.atom_draws as f64;
    let expected = expected_atom_count(1.0, b.l_min);
    Ok(Outcome::new((mean / expected - 1.0).abs(), b.atom_draws as u64)
        .detail("mean_count", mean)
        .detail("expected_count", expected))
}

/// Bit patterns of a few small experiments.
fn determinism_probe(offspring: &OffspringLaw, step: &StepLaw, seed: u64) -> Result<Vec<u64>> {
    let sampler = LayeredSampler::new(offspring, step);
    let mut bits = Vec::new();
    let b = ThetaLawBudget { n_scale: 50, replicates: 64, ..ThetaLawBudget::default() };
    let t = theta_law(offspring, &b, seed)?;
    bits.push(t.statistic.to_bits());
    let z = zero_value_sample(&sampler, 32, 50, 50, 100.0, seed, 1)?;
    bits.extend(z.iter().map(|v| v.to_bits()));
    let trees = sample_trees(&sampler, 64, seed, &[2], 1_000_000, CapPolicy::Retry { max_attempts: 4 })?;
    bits.extend(trees.trees.iter().map(|t| t.total()));
    let pool = sample_ise_pool(offspring, step, 200, 0.1, 8, seed, &[3])?;
    bits.extend(pool.iter().flat_map(|h| h.values.iter().map(|v| v.to_bits())));
    Ok(bits)
}

fn determinism(offspring: &OffspringLaw, step: &StepLaw, b: &DeterminismBudget, seed: u64) -> Result<Outcome> {
    let mut reference: Option<Vec<u64>> = None;
    let mut mismatches = 0u64;
    for &threads in &b.thread_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let bits = pool.install(|| determinism_probe(offspring, step, seed))?;
        match &reference {
            None => reference = Some(bits),
            Some(r) => {
                mismatches += r.len().abs_diff(bits.len()) as u64;
                mismatches += r.iter().zip(&bits).filter(|(a, b)| a != b).count() as u64;
            }
        }
    }
    Ok(Outcome::new(mismatches as f64, b.thread_counts.len() as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        assert!(Threshold::Below(0.06).holds(0.05));
        assert!(!Threshold::Below(0.06).holds(0.06));
        assert!(Threshold::AtMost(0.0).holds(0.0));
        assert!(Threshold::Within(1.7, 2.3).holds(2.3));
        assert!(!Threshold::Within(1.7, 2.3).holds(f64::NAN));
        assert!(!Threshold::Above(0.001).holds(f64::NAN));
        let json = serde_json::to_string(&Threshold::Within(0.44, 0.56)).unwrap();
        assert_eq!(json, r#"{"within":[0.44,0.56]}"#);
    }

    #[test]
    fn default_budgets_meet_the_minimums() {
        VerifyConfig::default().validate().unwrap();
        let err = VerifyConfig::default().with_scale(10).validate().unwrap_err();
        assert!(matches!(err, Error::BudgetTooSmall(_)));
    }

    #[test]
    fn config_fills_missing_fields() {
        let cfg: VerifyConfig = serde_json::from_str(r#"{"master_seed": 5, "scaling": {"replicates": 7}}"#).unwrap();
        assert_eq!(cfg.master_seed, 5);
        assert_eq!(cfg.scaling.replicates, 7);
        assert_eq!(cfg.scaling.n_scale, 500);
        assert_eq!(cfg.dual_path, DualPathBudget::default());
        let back: VerifyConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn plane_tree_counts() {
        // binary plane trees with 2m + 1 vertices: Catalan(m)
        for (n, c) in [(1, 1), (3, 1), (5, 2), (7, 5), (9, 14), (4, 0)] {
            assert_eq!(enumerate_plane_trees(&[0, 2], n).len(), c, "n = {n}");
        }
        // all plane trees with n vertices: Catalan(n - 1)
        for (n, c) in [(1, 1), (2, 1), (3, 2), (4, 5), (5, 14), (6, 42)] {
            assert_eq!(enumerate_plane_trees(&[0, 1, 2, 3, 4, 5], n).len(), c, "n = {n}");
        }
        for e in enumerate_plane_trees(&[0, 1, 2, 3], 6) {
            assert!(is_tree_encoding(&e));
        }
    }

    #[test]
    fn enumerated_laws() {
        let (shapes, measures) = enumerate_conditioned_laws(&OffspringLaw::binary(), &StepLaw::uniform3(), 3);
        assert_eq!(shapes.len(), 1);
        // two children on {-1, 0, 1}^2: root site always counted once
        let total: f64 = measures.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((measures[&vec![(0, 3)]] - 1.0 / 9.0).abs() < 1e-12);
        assert!((measures[&vec![(-1, 1), (0, 1), (1, 1)]] - 2.0 / 9.0).abs() < 1e-12);
        // geometric(1/2) conditioned on its size is uniform over plane trees
        let (shapes, _) = enumerate_conditioned_laws(&OffspringLaw::geometric_half(), &StepLaw::lazy(), 5);
        assert_eq!(shapes.len(), 14);
        assert!(shapes.values().all(|p| (p - 1.0 / 14.0).abs() < 1e-12));
    }

    #[test]
    fn chi_square_edge_cases() {
        let law: BTreeMap<u8, f64> = [(0, 0.5), (1, 0.5)].into_iter().collect();
        let fair: BTreeMap<u8, u64> = [(0, 500), (1, 500)].into_iter().collect();
        assert!((chi_square_p_value(&fair, &law).unwrap().0 - 1.0).abs() < 1e-12);
        let skewed: BTreeMap<u8, u64> = [(0, 700), (1, 300)].into_iter().collect();
        assert!(chi_square_p_value(&skewed, &law).unwrap().0 < 1e-6);
        let stray: BTreeMap<u8, u64> = [(2, 1)].into_iter().collect();
        assert_eq!(chi_square_p_value(&stray, &law).unwrap().0, 0.0);
    }
}
