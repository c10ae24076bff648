use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use brw_core::ensemble::{sample_trees, write_jump_table, DensitySnapshot, EnsembleProcess, Grid, TimedCurve};
use brw_core::limit::{
    assemble_limit_density, expected_atom_count, sample_jump_atoms, truncation_area_bound, LimitJumpSet,
};
use brw_core::rng::stream;
use brw_core::verify::{verify_suite, StatReport};
use brw_core::LayeredSampler;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

// Stream paths under the master seed, one per command.
const PATH_TREES: u64 = 0;
const PATH_LIMIT: u64 = 1;
const PATH_LIMIT_COUNTS: u64 = 2;

pub const MANIFEST: &str = "manifest.json";

/// `curves_s0.5.csv` for `s = 0.5`.
pub fn curve_file_name(s: f64) -> String {
    format!("curves_s{s}.csv")
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Every file under `dir` except the manifest, relative paths sorted.
fn list_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root)?.to_path_buf();
                if rel != Path::new(MANIFEST) {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Config, seed, tool version, checksums of every output file, and a
/// command-specific summary.
fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, summary: Value) -> anyhow::Result<()> {
    let mut files = BTreeMap::new();
    for rel in list_files(dir)? {
        files.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(&dir.join(&rel))?);
    }
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "master_seed": cfg.master_seed,
        "config": cfg,
        "summary": summary,
        "files": files,
    });
    write_json(&dir.join(MANIFEST), &manifest)
}

fn sample_ensemble(cfg: &RunConfig, trees: usize) -> anyhow::Result<(EnsembleProcess, u64)> {
    let (nu, f) = cfg.laws()?;
    let sampler = LayeredSampler::new(&nu, &f);
    // an ensemble holds at least one tree even when no time needs it
    let sampled = sample_trees(&sampler, trees.max(1), cfg.master_seed, &[PATH_TREES], cfg.vertex_cap, cfg.cap_policy)?;
    Ok((EnsembleProcess::build(sampled.trees, cfg.n_scale)?, sampled.cap_retries))
}

fn ensemble_grid(cfg: &RunConfig, e: &EnsembleProcess, s_max: f64) -> anyhow::Result<Grid> {
    Ok(match &cfg.x_grid {
        Some(x) => x.grid(cfg.n_scale)?,
        None => e.default_grid(s_max)?,
    })
}

/// `g^N_s` for every `s` in the grid, one CSV per time.
pub fn simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let s_max = cfg.s_max();
    let (e, cap_retries) = sample_ensemble(cfg, brw_core::ensemble::trees_at(s_max, cfg.n_scale)?)?;
    let grid = ensemble_grid(cfg, &e, s_max)?;
    let curves = e.eval_density_path(&cfg.s_grid, &grid)?;
    let mut times = Vec::new();
    for (&s, c) in cfg.s_grid.iter().zip(&curves) {
        let mut w = create(&out.join(curve_file_name(s)))?;
        c.write_csv(&mut w)?;
        w.flush()?;
        times.push(json!({
            "s": s,
            "theta": e.area_process(s)?,
            "zero_value": e.zero_process(s)?,
        }));
    }
    let snapshot = DensitySnapshot {
        n_scale: cfg.n_scale,
        curves: cfg.s_grid.iter().zip(curves).map(|(&s, curve)| TimedCurve { s, curve }).collect(),
    };
    write_json(&out.join("curves.json"), &snapshot)?;
    write_manifest(
        out,
        "simulate",
        cfg,
        json!({ "trees": e.trees().len(), "cap_retries": cap_retries, "times": times }),
    )
}

/// The `m` largest jumps up to the last time in the grid.
pub fn jumps(cfg: &RunConfig, m: usize, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let s_max = cfg.s_max();
    let available = brw_core::ensemble::trees_at(s_max, cfg.n_scale)?;
    let (e, cap_retries) = sample_ensemble(cfg, available)?;
    let ranked = e.ordered_jumps(s_max, m)?;
    let mut w = create(&out.join("jumps.csv"))?;
    write_jump_table(&ranked, &mut w)?;
    w.flush()?;
    let y_grid = Grid::symmetric(4.0, cfg.ise_grid_step)?;
    for j in &ranked {
        let mut w = create(&out.join(format!("jump_{:04}.csv", j.rank)))?;
        j.curve.write_csv(&mut w)?;
        w.flush()?;
        let tree = &e.trees()[j.tree_index - 1];
        let mut w = create(&out.join(format!("jump_{:04}_rescaled.csv", j.rank)))?;
        j.rescaled(tree, &y_grid).write_csv(&mut w)?;
        w.flush()?;
    }
    let all_jump_area: f64 = (1..=available).map(|i| e.jump(i).map(|j| j.area)).sum::<brw_core::Result<f64>>()?;
    write_manifest(
        out,
        "jumps",
        cfg,
        json!({
            "s_max": s_max,
            "m": m,
            "cap_retries": cap_retries,
            "theta_s_max": e.area_process(s_max)?,
            "all_jump_area": all_jump_area,
        }),
    )
}

/// One limit path with fresh ISE densities, its curves on the time grid,
/// and atom counts of `replicates` further paths.
pub fn limit_sample(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let (nu, f) = cfg.laws()?;
    let s_max = cfg.s_max();
    if s_max <= 0.0 {
        anyhow::bail!("limit-sample needs a positive time in s_grid");
    }
    let set =
        LimitJumpSet::sample(&nu, &f, s_max, cfg.l_min, cfg.n_ise, cfg.ise_grid_step, cfg.master_seed, &[PATH_LIMIT])?;
    set.write_to_dir(&out.join("limit"))?;
    let grid = match &cfg.x_grid {
        Some(x) => x.grid(cfg.n_scale)?,
        None => Grid::symmetric(3.0, 1.0 / (cfg.n_scale as f64).sqrt())?,
    };
    let mut times = Vec::new();
    for &s in &cfg.s_grid {
        let c = assemble_limit_density(&set, nu.variance(), f.variance(), s, &grid)?;
        let mut w = create(&out.join(curve_file_name(s)))?;
        c.write_csv(&mut w)?;
        w.flush()?;
        times.push(json!({ "s": s, "area": set.area(nu.variance(), s) }));
    }
    let mut rng = stream(cfg.master_seed, &[PATH_LIMIT_COUNTS]);
    let mut counted = 0usize;
    for _ in 0..cfg.replicates {
        counted += sample_jump_atoms(s_max, cfg.l_min, &mut rng)?.len();
    }
    write_manifest(
        out,
        "limit-sample",
        cfg,
        json!({
            "s_max": s_max,
            "l_min": cfg.l_min,
            "atom_count": set.atoms.len(),
            "expected_atom_count": expected_atom_count(s_max, cfg.l_min),
            "replicate_mean_atom_count": counted as f64 / cfg.replicates as f64,
            "replicates": cfg.replicates,
            "truncation_area_bound": truncation_area_bound(cfg.l_min, s_max)?,
            "times": times,
        }),
    )
}

/// Run the verification suite; `report.json` holds timings, the body file
/// does not.
pub fn verify(cfg: &RunConfig, out: &Path) -> anyhow::Result<StatReport> {
    std::fs::create_dir_all(out)?;
    let report = verify_suite(&cfg.verify_config())?;
    let mut w = create(&out.join("report.json"))?;
    writeln!(w, "{}", report.to_json()?)?;
    w.flush()?;
    let mut w = create(&out.join("report_body.json"))?;
    writeln!(w, "{}", report.body_json()?)?;
    w.flush()?;
    write_manifest(
        out,
        "verify",
        cfg,
        json!({
            "all_pass": report.all_pass,
            "failed": report.checks.iter().filter(|c| !c.pass).map(|c| c.check_id.clone()).collect::<Vec<_>>(),
        }),
    )?;
    Ok(report)
}
