use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{record_artifacts, save_manifest, DetectorSpec, Layout, Outcome, RunManifest};
use crate::detectors::{run_detector, DetectorConfig};
use crate::nulltest::write_atomic;
use crate::sampler::{read_benchmark, read_manifest};
use crate::seed::sha256_hex;
use crate::{Error, Result};

/// Sidecar of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreManifest {
    pub benchmark: String,
    pub detector: DetectorConfig,
    pub data_sha256: String,
    pub scores_sha256: String,
    pub wall_time_s: f64,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Machine-readable record of a failed (benchmark, detector) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub benchmark: String,
    pub detector: DetectorConfig,
    pub error: String,
}

struct Cell<'a> {
    benchmark: String,
    csv: PathBuf,
    data_sha256: String,
    detector: &'a DetectorSpec,
}

enum CellResult {
    Scored,
    Skipped,
    Failed(String),
}

fn up_to_date(layout: &Layout, cell: &Cell, cfg: &DetectorConfig) -> bool {
    let path = layout.score_csv(&cell.benchmark, cfg.kind);
    let Ok(text) = fs::read_to_string(path.with_extension("json")) else {
        return false;
    };
    let Ok(man) = serde_json::from_str::<ScoreManifest>(&text) else {
        return false;
    };
    man.detector == *cfg
        && man.data_sha256 == cell.data_sha256
        && fs::read(&path).is_ok_and(|b| sha256_hex(&b) == man.scores_sha256)
}

fn score_cell(layout: &Layout, cell: &Cell, cfg: &DetectorConfig) -> Result<CellResult> {
    if up_to_date(layout, cell, cfg) {
        return Ok(CellResult::Skipped);
    }
    let err_path = layout.error_record(&cell.benchmark, cfg.kind);
    let start = Instant::now();
    let attempt = catch_unwind(AssertUnwindSafe(|| -> Result<_> {
        let b = read_benchmark(&cell.csv)?;
        run_detector(cfg, &b.features)
    }));
    let result = match attempt {
        Ok(r) => r,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(Error::Convergence(format!("detector panicked: {msg}")))
        }
    };
    match result {
        Ok(sv) => {
            let wall = start.elapsed().as_secs_f64();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["point.id", "score"])?;
            for (i, s) in sv.scores.iter().enumerate() {
                w.write_record([(i + 1).to_string(), s.to_string()])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
            let path = layout.score_csv(&cell.benchmark, cfg.kind);
            write_atomic(&path, &bytes)?;
            let man = ScoreManifest {
                benchmark: cell.benchmark.clone(),
                detector: cfg.clone(),
                data_sha256: cell.data_sha256.clone(),
                scores_sha256: sha256_hex(&bytes),
                wall_time_s: wall,
                flags: sv.flags,
            };
            write_atomic(&path.with_extension("json"), &serde_json::to_vec_pretty(&man)?)?;
            if err_path.exists() {
                fs::remove_file(&err_path).map_err(|e| Error::io(&err_path, e))?;
            }
            Ok(CellResult::Scored)
        }
        Err(e) => {
            let rec = ErrorRecord {
                benchmark: cell.benchmark.clone(),
                detector: cfg.clone(),
                error: e.to_string(),
            };
            write_atomic(&err_path, &serde_json::to_vec_pretty(&rec)?)?;
            let msg = format!("{} / {}: {e}", cell.benchmark, cfg.kind);
            warn!("{msg}");
            Ok(CellResult::Failed(msg))
        }
    }
}

/// Scores every (benchmark, detector) cell, skipping cells whose score file
/// is current; a failing cell leaves an error record and does not stop the
/// others.
pub fn cmd_run(m: &RunManifest) -> Result<Outcome> {
    m.validate()?;
    let layout = m.layout();
    let mut cells = Vec::new();
    for spec in m.specs() {
        let csv = layout.benchmark_csv(&spec);
        let Ok(man) = read_manifest(&csv) else {
            continue;
        };
        for d in &m.detectors {
            cells.push(Cell {
                benchmark: man.id.clone(),
                csv: csv.clone(),
                data_sha256: man.data_sha256.clone(),
                detector: d,
            });
        }
    }
    if cells.is_empty() {
        return Err(Error::Empty(format!(
            "no benchmarks under {}; run generate first",
            layout.root.display()
        )));
    }
    save_manifest(m)?;
    let results: Vec<Result<CellResult>> = m.thread_pool()?.install(|| {
        cells
            .par_iter()
            .map(|c| score_cell(&layout, c, &m.detector_config(c.detector, &c.benchmark)))
            .collect()
    });
    let mut outcome = Outcome::default();
    for r in results {
        match r? {
            CellResult::Scored => outcome.completed += 1,
            CellResult::Skipped => outcome.skipped += 1,
            CellResult::Failed(msg) => outcome.failures.push(msg),
        }
    }
    info!(
        "run: {} scored, {} current, {} failed",
        outcome.completed,
        outcome.skipped,
        outcome.failures.len()
    );
    record_artifacts(&layout.root)?;
    Ok(outcome)
}
