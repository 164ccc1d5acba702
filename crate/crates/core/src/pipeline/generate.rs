use std::fs;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ensure_dir, record_artifacts, save_manifest, Layout, MothersetSource, Outcome, RunManifest};
use crate::difficulty::{difficulty_table, fit_difficulty_oracle, GridPoint, KlrConfig};
use crate::ingest::{generate_synthetic, label_candidates, load_motherset, write_motherset, Motherset};
use crate::nulltest::write_atomic;
use crate::sampler::{generate_benchmark, read_manifest, write_benchmark, BenchmarkSpec};
use crate::seed::{derive_seed, sha256_hex};
use crate::{Error, Result};

/// Model-selection record written next to a difficulty table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub motherset: String,
    pub motherset_sha256: String,
    pub seed: u64,
    pub config: KlrConfig,
    pub grid: Vec<GridPoint>,
    pub selected: usize,
    pub bandwidth: f64,
    pub regularization: f64,
    pub median_distance: f64,
    pub cv_points: usize,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfeasibleSpec {
    pub id: String,
    pub motherset: String,
    pub reason: String,
}

fn build_motherset(src: &MothersetSource, m: &RunManifest) -> Result<Motherset> {
    let mut mset = if src.synthetic {
        generate_synthetic(derive_seed(m.master_seed, &["synthetic", &src.name]))
    } else {
        let path = src.path.as_ref().expect("validated");
        if !path.exists() {
            return Err(Error::io(path, std::io::ErrorKind::NotFound.into()));
        }
        let raw = load_motherset(path, src.target.as_deref().expect("validated"), src.task.expect("validated"))?;
        label_candidates(&raw, derive_seed(m.master_seed, &["label", &src.name]))?
    };
    mset.name = src.name.clone();
    Ok(mset)
}

fn read_difficulty(csv: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(csv)?;
    rdr.records()
        .map(|r| {
            let r = r?;
            let v = r.get(2).ok_or_else(|| Error::MissingColumn("difficulty".into()))?;
            v.parse().map_err(|_| Error::Parse(format!("difficulty `{v}`")))
        })
        .collect()
}

/// Difficulty per motherset point, reused when the motherset, seed and
/// oracle configuration are unchanged.
fn difficulty(mset: &Motherset, mset_sha: &str, m: &RunManifest, layout: &Layout) -> Result<Vec<f64>> {
    let csv = layout.difficulty_csv(&mset.name);
    let json = csv.with_extension("json");
    let seed = derive_seed(m.master_seed, &["difficulty", &mset.name]);
    if let Ok(text) = fs::read_to_string(&json) {
        if let Ok(rep) = serde_json::from_str::<DifficultyReport>(&text) {
            if rep.motherset_sha256 == mset_sha && rep.seed == seed && rep.config == m.oracle {
                if let Ok(table) = read_difficulty(&csv) {
                    if table.len() == mset.n() {
                        info!("{}: reusing difficulty table", mset.name);
                        return Ok(table);
                    }
                }
            }
        }
    }
    info!("{}: fitting difficulty oracle on {} points", mset.name, mset.n());
    let fit = fit_difficulty_oracle(mset, seed, &m.oracle)?;
    let table = difficulty_table(&fit.oracle, mset)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "label", "difficulty"])?;
    for (i, (d, l)) in table.iter().zip(&mset.labels).enumerate() {
        w.write_record([(i + 1).to_string(), l.as_str().to_string(), d.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&csv, &bytes)?;
    let rep = DifficultyReport {
        motherset: mset.name.clone(),
        motherset_sha256: mset_sha.to_string(),
        seed,
        config: m.oracle.clone(),
        grid: fit.grid,
        selected: fit.selected,
        bandwidth: fit.oracle.bandwidth,
        regularization: fit.oracle.regularization,
        median_distance: fit.median_distance,
        cv_points: fit.cv_points,
        objective_trace: fit.objective_trace,
    };
    write_atomic(&json, &serde_json::to_vec_pretty(&rep)?)?;
    Ok(table)
}

/// An existing benchmark file is kept when its manifest matches the spec and
/// size cap and its data matches the recorded hash.
fn already_generated(spec: &BenchmarkSpec, max_size: usize, csv: &Path) -> bool {
    match (read_manifest(csv), fs::read(csv)) {
        (Ok(man), Ok(bytes)) => {
            man.spec == *spec && man.max_size == max_size && man.data_sha256 == sha256_hex(&bytes)
        }
        _ => false,
    }
}

enum SpecResult {
    Written,
    Skipped,
    Infeasible(String),
}

/// Materializes mothersets, difficulty tables and every feasible benchmark.
pub fn cmd_generate(m: &RunManifest) -> Result<Outcome> {
    m.validate()?;
    if m.mothersets.is_empty() {
        return Err(Error::Manifest("no mothersets requested".into()));
    }
    let layout = m.layout();
    ensure_dir(&layout.root)?;
    save_manifest(m)?;
    let mut outcome = Outcome::default();
    let mut prepared = Vec::new();
    for src in &m.mothersets {
        let mset = build_motherset(src, m)?;
        let csv = write_motherset(&mset, &layout.mothersets())?;
        let sha = sha256_hex(&fs::read(&csv).map_err(|e| Error::io(&csv, e))?);
        match difficulty(&mset, &sha, m, &layout) {
            Ok(table) => prepared.push((mset, table)),
            Err(e @ (Error::Io { .. } | Error::Json(_) | Error::Csv(_))) => return Err(e),
            Err(e) => {
                warn!("{}: no difficulty oracle: {e}", src.name);
                outcome.failures.push(format!("{}: difficulty oracle: {e}", src.name));
            }
        }
    }
    let specs: Vec<(usize, BenchmarkSpec)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(i, (mset, _))| {
            crate::sampler::enumerate_specs(&mset.name, &m.levels, m.replicates, m.master_seed)
                .into_iter()
                .map(move |s| (i, s))
        })
        .collect();
    for (mset, _) in &prepared {
        ensure_dir(&layout.benchmark_dir(&mset.name))?;
    }
    let results: Vec<Result<SpecResult>> = m.thread_pool()?.install(|| {
        specs
            .par_iter()
            .map(|(i, spec)| {
                let (mset, table) = &prepared[*i];
                let csv = layout.benchmark_csv(spec);
                if already_generated(spec, m.sampler.max_size, &csv) {
                    return Ok(SpecResult::Skipped);
                }
                match generate_benchmark(mset, table, spec, &m.sampler) {
                    Ok(b) => {
                        write_benchmark(&b, &layout.benchmark_dir(&mset.name))?;
                        Ok(SpecResult::Written)
                    }
                    Err(e @ (Error::Io { .. } | Error::Json(_) | Error::Csv(_))) => Err(e),
                    Err(e) => Ok(SpecResult::Infeasible(e.to_string())),
                }
            })
            .collect()
    });
    let mut infeasible = Vec::new();
    for ((_, spec), r) in specs.iter().zip(results) {
        match r? {
            SpecResult::Written => outcome.completed += 1,
            SpecResult::Skipped => outcome.skipped += 1,
            SpecResult::Infeasible(reason) => {
                let csv = layout.benchmark_csv(spec);
                for p in [csv.clone(), csv.with_extension("json")] {
                    if p.exists() {
                        fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                    }
                }
                infeasible.push(InfeasibleSpec {
                    id: spec.id(),
                    motherset: spec.motherset.clone(),
                    reason,
                });
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in &infeasible {
        w.serialize(rec)?;
    }
    if infeasible.is_empty() {
        w.write_record(["id", "motherset", "reason"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&layout.infeasible(), &bytes)?;
    info!(
        "generate: {} written, {} kept, {} infeasible",
        outcome.completed,
        outcome.skipped,
        infeasible.len()
    );
    record_artifacts(&layout.root)?;
    Ok(outcome)
}
