use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Label, Motherset, Origin};
use crate::{Error, Result};

/// Sidecar describing a motherset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MothersetManifest {
    pub name: String,
    pub origin: Origin,
    pub n: usize,
    pub d: usize,
    pub n_candidate_normals: usize,
    pub n_candidate_anomalies: usize,
    pub feature_names: Vec<String>,
    pub dropped_columns: Vec<String>,
    pub anomaly_source: Vec<String>,
    pub seed: Option<u64>,
}

impl MothersetManifest {
    pub fn of(m: &Motherset) -> Self {
        MothersetManifest {
            name: m.name.clone(),
            origin: m.origin,
            n: m.n(),
            d: m.d(),
            n_candidate_normals: m.count(Label::Nominal),
            n_candidate_anomalies: m.count(Label::Anomaly),
            feature_names: m.feature_names.clone(),
            dropped_columns: m.dropped_columns.clone(),
            anomaly_source: m.anomaly_source.clone(),
            seed: m.seed,
        }
    }
}

pub(crate) fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `<dir>/<name>.csv` (a `label` column followed by the features) and
/// the `<dir>/<name>.json` sidecar. Returns the CSV path.
pub fn write_motherset(m: &Motherset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", m.name));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend(m.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..m.n() {
        let mut rec = vec![m.labels[i].as_str().to_string()];
        rec.extend(m.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&csv_path, e.into_error()))?;
    fs::write(&csv_path, bytes).map_err(|e| Error::io(&csv_path, e))?;
    let manifest = serde_json::to_string_pretty(&MothersetManifest::of(m))?;
    let mpath = manifest_path(&csv_path);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(csv_path)
}

/// Reads a motherset written by [`write_motherset`].
pub fn read_motherset(csv_path: &Path) -> Result<Motherset> {
    let mpath = manifest_path(csv_path);
    let manifest: MothersetManifest = serde_json::from_str(
        &fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?,
    )?;
    let mut r = csv::Reader::from_path(csv_path)?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("label") {
        return Err(Error::MissingColumn("label".into()));
    }
    let d = headers.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        labels.push(rec[0].parse::<Label>()?);
        for f in rec.iter().skip(1) {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad feature value `{f}`")))?,
            );
        }
    }
    let n = labels.len();
    if n != manifest.n || d != manifest.d {
        return Err(Error::Manifest(format!(
            "{} does not match its manifest ({n}x{d} vs {}x{})",
            csv_path.display(),
            manifest.n,
            manifest.d
        )));
    }
    Ok(Motherset {
        name: manifest.name,
        feature_names: headers.iter().skip(1).map(str::to_string).collect(),
        features: DMatrix::from_row_slice(n, d, &values),
        labels,
        origin: manifest.origin,
        dropped_columns: manifest.dropped_columns,
        anomaly_source: manifest.anomaly_source,
        seed: manifest.seed,
    })
}
