use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::sample::{normal_cap, rf_matches};
use super::{Benchmark, BenchmarkSpec, Measured};
use crate::ingest::Label;
use crate::nulltest::write_atomic;
use crate::seed::sha256_hex;
use crate::{Error, Result};

/// Everything needed to audit a benchmark without reading its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub id: String,
    pub spec: BenchmarkSpec,
    pub n: usize,
    pub n_anomalies: usize,
    pub n_normals: usize,
    pub d_original: usize,
    pub d: usize,
    pub measured: Measured,
    pub candidate_normals: usize,
    pub max_size: usize,
    pub source_indices: Vec<usize>,
    pub irrelevant_sources: Vec<usize>,
    /// SHA-256 of the benchmark CSV.
    pub data_sha256: String,
}

/// A broken benchmark invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    SizeCap { n: usize, cap: usize },
    NormalCap { normals: usize, cap: usize },
    MissingClass,
    RelativeFrequency { anomalies: usize, n: usize, target: f64 },
    Difficulty { mean: f64 },
    Clusteredness { value: Option<f64> },
    DistanceRatio { measured: f64, target: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SizeCap { n, cap } => write!(f, "{n} points exceed the cap of {cap}"),
            Violation::NormalCap { normals, cap } => write!(f, "{normals} normals exceed the 90% cap of {cap}"),
            Violation::MissingClass => write!(f, "a class is empty"),
            Violation::RelativeFrequency { anomalies, n, target } => {
                write!(f, "{anomalies} anomalies of {n} points is not rate {target}")
            }
            Violation::Difficulty { mean } => write!(f, "mean difficulty {mean} outside its bin"),
            Violation::Clusteredness { value } => write!(f, "clusteredness {value:?} has the wrong sign"),
            Violation::DistanceRatio { measured, target } => {
                write!(f, "distance ratio {measured} too far from {target}")
            }
        }
    }
}

impl BenchmarkManifest {
    pub fn of(b: &Benchmark, data_sha256: &str) -> Self {
        let n_anomalies = b.n_anomalies();
        BenchmarkManifest {
            id: b.spec.id(),
            spec: b.spec.clone(),
            n: b.n(),
            n_anomalies,
            n_normals: b.n() - n_anomalies,
            d_original: b.d() - b.irrelevant_sources.len(),
            d: b.d(),
            measured: b.measured.clone(),
            candidate_normals: b.candidate_normals,
            max_size: b.max_size,
            source_indices: b.source_indices.clone(),
            irrelevant_sources: b.irrelevant_sources.clone(),
            data_sha256: data_sha256.to_string(),
        }
    }

    /// Invariant check from the manifest alone. The distance ratio is only
    /// checked when `alpha` is given.
    pub fn violations(&self, alpha: Option<f64>, ratio_tolerance: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let spec = &self.spec;
        if self.n > self.max_size {
            out.push(Violation::SizeCap {
                n: self.n,
                cap: self.max_size,
            });
        }
        let cap = normal_cap(self.candidate_normals);
        if self.n_normals > cap {
            out.push(Violation::NormalCap {
                normals: self.n_normals,
                cap,
            });
        }
        if self.n_anomalies == 0 || self.n_normals == 0 {
            out.push(Violation::MissingClass);
        }
        if let Some(r) = spec.rf.rate() {
            if !rf_matches(self.n_anomalies, self.n, r) {
                out.push(Violation::RelativeFrequency {
                    anomalies: self.n_anomalies,
                    n: self.n,
                    target: r,
                });
            }
        }
        if !spec.pd.is_control() && !spec.pd.contains(self.measured.mean_difficulty) {
            out.push(Violation::Difficulty {
                mean: self.measured.mean_difficulty,
            });
        }
        if let Some(s) = spec.nc.sign() {
            let ok = self.measured.clusteredness.is_some_and(|v| v.is_finite() && s * v > 0.0);
            if !ok {
                out.push(Violation::Clusteredness {
                    value: self.measured.clusteredness,
                });
            }
        }
        if let Some(a) = alpha {
            if (self.measured.distance_ratio - a).abs() > ratio_tolerance {
                out.push(Violation::DistanceRatio {
                    measured: self.measured.distance_ratio,
                    target: a,
                });
            }
        }
        out
    }
}

fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `<id>.csv` (`point.id, ground.truth, V1..Vd`) and `<id>.json`
/// into `dir`; returns the CSV path.
pub fn write_benchmark(b: &Benchmark, dir: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["point.id".to_string(), "ground.truth".to_string()];
    header.extend((1..=b.d()).map(|j| format!("V{j}")));
    w.write_record(&header)?;
    for i in 0..b.n() {
        let mut rec = vec![(i + 1).to_string(), b.labels[i].as_str().to_string()];
        rec.extend(b.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    let path = dir.join(format!("{}.csv", b.spec.id()));
    write_atomic(&path, &bytes)?;
    let manifest = BenchmarkManifest::of(b, &sha256_hex(&bytes));
    write_atomic(&manifest_path(&path), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

/// A benchmark as read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedBenchmark {
    pub features: DMatrix<f64>,
    pub labels: Vec<Label>,
    pub manifest: BenchmarkManifest,
}

pub fn read_manifest(csv_path: &Path) -> Result<BenchmarkManifest> {
    let mp = manifest_path(csv_path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a benchmark and checks it against its manifest hash.
pub fn read_benchmark(csv_path: &Path) -> Result<LoadedBenchmark> {
    let manifest = read_manifest(csv_path)?;
    let bytes = std::fs::read(csv_path).map_err(|e| Error::io(csv_path, e))?;
    if sha256_hex(&bytes) != manifest.data_sha256 {
        return Err(Error::Manifest(format!("{} does not match its recorded hash", csv_path.display())));
    }
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        labels.push(rec.get(1).ok_or_else(|| Error::MissingColumn("ground.truth".into()))?.parse()?);
        for v in rec.iter().skip(2) {
            values.push(v.parse::<f64>().map_err(|e| Error::Parse(format!("{v}: {e}")))?);
        }
    }
    if values.len() != labels.len() * manifest.d {
        return Err(Error::DimensionMismatch {
            expected: labels.len() * manifest.d,
            got: values.len(),
        });
    }
    Ok(LoadedBenchmark {
        features: DMatrix::from_row_slice(labels.len(), manifest.d, &values),
        labels,
        manifest,
    })
}
