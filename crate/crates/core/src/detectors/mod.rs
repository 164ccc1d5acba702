//! Unsupervised anomaly detectors. Every detector maps an n x d matrix to n
//! finite scores where larger means more anomalous.

mod abod;
mod egmm;
mod iforest;
mod knn;
mod loda;
mod lof;
mod rkde;

pub use abod::abod_score;
pub use egmm::{egmm_score, EgmmParams};
pub use iforest::{iforest_score, IsolationForest};
pub use knn::{knn, Neighbor};
pub use loda::{loda_score, Loda};
pub use lof::lof_score;
pub use rkde::{rkde_score, Rkde, RkdeParams};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Trivial,
    #[serde(rename = "iforest")]
    IForest,
    Lof,
    Abod,
    Loda,
    Egmm,
    Rkde,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 7] = [
        DetectorKind::Trivial,
        DetectorKind::IForest,
        DetectorKind::Lof,
        DetectorKind::Abod,
        DetectorKind::Loda,
        DetectorKind::Egmm,
        DetectorKind::Rkde,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Trivial => "trivial",
            DetectorKind::IForest => "iforest",
            DetectorKind::Lof => "lof",
            DetectorKind::Abod => "abod",
            DetectorKind::Loda => "loda",
            DetectorKind::Egmm => "egmm",
            DetectorKind::Rkde => "rkde",
        }
    }

    /// Parameter names the detector accepts.
    pub fn parameters(self) -> &'static [&'static str] {
        match self {
            DetectorKind::Trivial => &[],
            DetectorKind::IForest => &["trees", "subsample"],
            DetectorKind::Lof => &["k", "k_fraction"],
            DetectorKind::Abod => &["k", "k_fraction"],
            DetectorKind::Loda => &["projections"],
            DetectorKind::Egmm => &["max_components", "replicates", "keep", "variance", "max_iter", "tol"],
            DetectorKind::Rkde => &["robust", "max_iter", "tol", "bandwidth"],
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownDetector(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Overrides of the detector's defaults.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind, seed: u64) -> Self {
        DetectorConfig {
            kind,
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    fn usize_param(&self, name: &str, min: usize) -> Result<Option<usize>> {
        match self.param(name) {
            None => Ok(None),
            Some(v) if v.fract() == 0.0 && v >= min as f64 => Ok(Some(v as usize)),
            Some(v) => Err(Error::InvalidParameter(format!(
                "{}: {name} = {v} must be an integer >= {min}",
                self.kind
            ))),
        }
    }

    fn unit_param(&self, name: &str) -> Result<Option<f64>> {
        match self.param(name) {
            Some(v) if !(v > 0.0 && v <= 1.0) => Err(Error::InvalidParameter(format!(
                "{}: {name} = {v} must lie in (0, 1]",
                self.kind
            ))),
            other => Ok(other),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for name in self.params.keys() {
            if !self.kind.parameters().contains(&name.as_str()) {
                return Err(Error::InvalidParameter(format!("{} has no parameter {name}", self.kind)));
            }
        }
        for (name, v) in &self.params {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{}: {name} = {v}", self.kind)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub detector: DetectorConfig,
    /// Notes about degraded runs, e.g. a robust fit that fell back.
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Euclidean distance of every point from the data mean.
pub fn trivial_score(data: &DMatrix<f64>) -> Vec<f64> {
    let n = data.nrows() as f64;
    let mean: Vec<f64> = data.column_iter().map(|c| c.sum() / n).collect();
    data.row_iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>().sqrt())
        .collect()
}

fn neighbor_count(cfg: &DetectorConfig, n: usize, default_fraction: f64, min: usize) -> Result<usize> {
    if let Some(k) = cfg.usize_param("k", 1)? {
        return Ok(k);
    }
    let f = cfg.unit_param("k_fraction")?.unwrap_or(default_fraction);
    Ok(((f * n as f64).ceil() as usize).max(min))
}

/// Runs the configured detector on `data`.
pub fn run_detector(cfg: &DetectorConfig, data: &DMatrix<f64>) -> Result<ScoreVector> {
    cfg.validate()?;
    let n = data.nrows();
    if n == 0 || data.ncols() == 0 {
        return Err(Error::Empty("detector input".into()));
    }
    let mut flags = Vec::new();
    let scores = match cfg.kind {
        DetectorKind::Trivial => trivial_score(data),
        DetectorKind::IForest => iforest_score(
            data,
            cfg.usize_param("trees", 1)?.unwrap_or(100),
            cfg.usize_param("subsample", 2)?.unwrap_or(2048),
            cfg.seed,
        )?,
        DetectorKind::Lof => lof_score(data, neighbor_count(cfg, n, 0.03, 1)?)?,
        DetectorKind::Abod => abod_score(data, neighbor_count(cfg, n, 0.005, 3)?)?,
        DetectorKind::Loda => {
            let p = cfg.usize_param("projections", 1)?.unwrap_or(3 * data.ncols());
            loda_score(data, p, cfg.seed)?
        }
        DetectorKind::Egmm => {
            let mut p = EgmmParams::default();
            if let Some(v) = cfg.usize_param("max_components", 1)? {
                p.max_components = v;
            }
            if let Some(v) = cfg.usize_param("replicates", 1)? {
                p.replicates = v;
            }
            if let Some(v) = cfg.unit_param("keep")? {
                p.keep = v;
            }
            if let Some(v) = cfg.unit_param("variance")? {
                p.variance = v;
            }
            if let Some(v) = cfg.usize_param("max_iter", 1)? {
                p.max_iter = v;
            }
            if let Some(v) = cfg.param("tol") {
                p.tol = v;
            }
            egmm_score(data, &p, cfg.seed)?
        }
        DetectorKind::Rkde => {
            let mut p = RkdeParams::default();
            if let Some(v) = cfg.param("robust") {
                p.robust = v != 0.0;
            }
            if let Some(v) = cfg.usize_param("max_iter", 1)? {
                p.max_iter = v;
            }
            if let Some(v) = cfg.param("tol") {
                p.tol = v;
            }
            p.bandwidth = cfg.param("bandwidth");
            let (s, fell_back) = rkde_score(data, &p)?;
            if fell_back {
                flags.push("rkde: robust weights did not converge, plain KDE used".to_string());
            }
            s
        }
    };
    if scores.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Convergence(format!("{} produced a non-finite score at point {}", cfg.kind, i + 1)));
    }
    Ok(ScoreVector {
        scores,
        detector: cfg.clone(),
        flags,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, Normal};

    use crate::seed::rng;

    /// A tight 2-D Gaussian cluster of `n` points plus one point 20 sigma
    /// away, stored last.
    pub fn planted(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let mut m = DMatrix::from_fn(n + 1, 2, |_, _| z.sample(&mut r));
        m[(n, 0)] = 20.0;
        m[(n, 1)] = 0.0;
        m
    }

    pub fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(n, d, |_, _| z.sample(&mut r))
    }

    /// Rank of the last point (0 = highest score).
    pub fn rank_of_last(scores: &[f64]) -> usize {
        let last = *scores.last().unwrap();
        scores[..scores.len() - 1].iter().filter(|&&s| s >= last).count()
    }
}
