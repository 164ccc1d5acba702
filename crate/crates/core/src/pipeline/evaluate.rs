use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;

use super::{record_artifacts, save_manifest, Layout, Outcome, RunManifest, ScoreManifest};
use crate::analysis::{mark_failures, EvalRow};
use crate::detectors::DetectorKind;
use crate::ingest::{Label, MothersetManifest, Origin};
use crate::metrics::{auc, average_precision_seeded, evaluate_scores};
use crate::nulltest::{test_result, write_atomic, Metric, NullCache, ALPHAS};
use crate::sampler::{read_benchmark, read_manifest, BenchmarkManifest};
use crate::seed::{derive_seed, sha256_hex};
use crate::{Error, Result};

fn read_scores(layout: &Layout, man: &BenchmarkManifest, detector: DetectorKind) -> Result<Option<Vec<f64>>> {
    let path = layout.score_csv(&man.id, detector);
    let Ok(bytes) = fs::read(&path) else {
        return Ok(None);
    };
    let side = path.with_extension("json");
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sm: ScoreManifest = serde_json::from_str(&text)?;
    if sm.data_sha256 != man.data_sha256 || sm.scores_sha256 != sha256_hex(&bytes) {
        return Err(Error::Manifest(format!(
            "{} is stale or modified; rerun `run`",
            path.display()
        )));
    }
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let scores = rdr
        .records()
        .map(|r| {
            let r = r?;
            let v = r.get(1).ok_or_else(|| Error::MissingColumn("score".into()))?;
            v.parse::<f64>().map_err(|_| Error::Parse(format!("score `{v}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(scores))
}

fn evaluate_benchmark(
    m: &RunManifest,
    layout: &Layout,
    csv: &Path,
    origin: Origin,
    nulls: &NullCache,
) -> Result<Vec<EvalRow>> {
    let b = read_benchmark(csv)?;
    let man = &b.manifest;
    let mut scored = Vec::new();
    for d in &m.detectors {
        if let Some(s) = read_scores(layout, man, d.kind)? {
            if s.len() != b.labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: b.labels.len(),
                    got: s.len(),
                });
            }
            scored.push((d.kind, s));
        }
    }
    if scored.is_empty() {
        return Ok(Vec::new());
    }
    let tie_seed = |det: DetectorKind| derive_seed(m.master_seed, &["ties", &man.id, det.as_str()]);
    let labels: &[Label] = &b.labels;
    let trivial = match scored.iter().find(|(k, _)| *k == DetectorKind::Trivial) {
        Some((k, s)) => Some((auc(s, labels)?, average_precision_seeded(s, labels, tie_seed(*k))?)),
        None => None,
    };
    let [null_auc, null_ap] = nulls.get(man.n_anomalies, man.n_normals)?;
    let mut rows = Vec::with_capacity(scored.len());
    for (kind, scores) in &scored {
        let rec = evaluate_scores(scores, labels, tie_seed(*kind), trivial)?;
        let mut row = EvalRow {
            benchmark: man.id.clone(),
            mset: man.spec.motherset.clone(),
            origin,
            pd: man.spec.pd,
            rf: man.spec.rf,
            nc: man.spec.nc,
            fi: man.spec.fi,
            replicate: man.spec.replicate,
            n: man.n,
            n_anom: man.n_anomalies,
            mean_difficulty: man.measured.mean_difficulty,
            anomaly_fraction: man.measured.anomaly_fraction,
            clusteredness: man.measured.clusteredness,
            distance_ratio: man.measured.distance_ratio,
            detector: *kind,
            auc: rec.auc,
            ap: rec.ap,
            expected_ap: rec.expected_ap,
            logit_auc: rec.logit_auc,
            log_lift: rec.log_lift,
            trivial_log_ratio_auc: rec.trivial_log_ratio_auc,
            trivial_log_ratio_ap: rec.trivial_log_ratio_ap,
            reject_auc_05: false,
            reject_auc_01: false,
            reject_auc_001: false,
            reject_ap_05: false,
            reject_ap_01: false,
            reject_ap_001: false,
            failed_auc_05: false,
            failed_auc_01: false,
            failed_auc_001: false,
            failed_ap_05: false,
            failed_ap_01: false,
            failed_ap_001: false,
            failed_either_05: false,
            failed_either_01: false,
            failed_either_001: false,
        };
        for alpha in ALPHAS {
            let a = !test_result(rec.auc, &null_auc, alpha)?.is_fail();
            let p = !test_result(rec.ap, &null_ap, alpha)?.is_fail();
            row.set_reject(Metric::Auc, alpha, a)?;
            row.set_reject(Metric::Ap, alpha, p)?;
        }
        rows.push(row);
    }
    mark_failures(&mut rows)?;
    Ok(rows)
}

fn origin_of(layout: &Layout, mset: &str) -> Result<Origin> {
    let path = layout.motherset_csv(mset).with_extension("json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str::<MothersetManifest>(&text)?.origin)
}

/// Computes metrics, null-test verdicts and benchmark-failure flags for every
/// scored (benchmark, detector) pair and writes the evaluation table.
pub fn cmd_evaluate(m: &RunManifest) -> Result<Outcome> {
    m.validate()?;
    let layout = m.layout();
    let mut origins = BTreeMap::new();
    let mut benches = Vec::new();
    for spec in m.specs() {
        let csv = layout.benchmark_csv(&spec);
        if read_manifest(&csv).is_err() {
            continue;
        }
        if !origins.contains_key(&spec.motherset) {
            origins.insert(spec.motherset.clone(), origin_of(&layout, &spec.motherset)?);
        }
        benches.push((csv, origins[&spec.motherset]));
    }
    let nulls = NullCache::new(layout.nulls(), m.null, m.master_seed)?;
    let results: Vec<Result<Vec<EvalRow>>> = m.thread_pool()?.install(|| {
        benches
            .par_iter()
            .map(|(csv, origin)| evaluate_benchmark(m, &layout, csv, *origin, &nulls))
            .collect()
    });
    let mut outcome = Outcome::default();
    let mut w = csv::Writer::from_writer(Vec::new());
    for ((csv, _), r) in benches.iter().zip(results) {
        match r {
            Ok(rows) if rows.is_empty() => {}
            Ok(rows) => {
                outcome.completed += rows.len();
                for row in &rows {
                    w.serialize(row)?;
                }
            }
            Err(Error::Empty(msg)) => {
                warn!("{}: {msg}", csv.display());
                outcome.failures.push(msg);
            }
            Err(e) => return Err(e),
        }
    }
    if outcome.completed == 0 {
        return Err(Error::Empty("no scored benchmarks to evaluate".into()));
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    save_manifest(m)?;
    write_atomic(&layout.evaluation(), &bytes)?;
    info!("evaluate: {} rows", outcome.completed);
    record_artifacts(&layout.root)?;
    Ok(outcome)
}

pub fn read_evaluation(path: &Path) -> Result<Vec<EvalRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::ErrorKind::NotFound.into()),
        _ => Error::Csv(e),
    })?;
    rdr.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
