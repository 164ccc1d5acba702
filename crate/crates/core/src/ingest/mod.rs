//! Dataset ingestion and relabeling into candidate normals / candidate
//! anomalies.
//!
//! Binary tasks keep their two classes; regression responses are split at
//! the median; multiclass problems are reduced to two class-sets by
//! [`confusion_partition`]. In every case the smaller side becomes the
//! candidate-anomaly class.

mod confusion;
mod csv_load;
pub mod forest;
mod io;
mod synthetic;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::mean_var;
use crate::{Error, Result};

pub use confusion::{confusion_partition, ConfusionGraph};
pub use csv_load::{load_motherset, DroppedColumn, DropReason};
pub use io::{read_motherset, write_motherset, MothersetManifest};
pub use synthetic::{generate_synthetic, SYNTHETIC_DIM, SYNTHETIC_PER_CLASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TaskKind::Binary),
            "multiclass" => Ok(TaskKind::Multiclass),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Parse(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Binary,
    Multiclass,
    Regression,
    Synthetic,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Binary => "binary",
            Origin::Multiclass => "multiclass",
            Origin::Regression => "regression",
            Origin::Synthetic => "synthetic",
        }
    }
}

impl From<TaskKind> for Origin {
    fn from(t: TaskKind) -> Self {
        match t {
            TaskKind::Binary => Origin::Binary,
            TaskKind::Multiclass => Origin::Multiclass,
            TaskKind::Regression => Origin::Regression,
        }
    }
}

/// Ground truth of a point: candidate normal / candidate anomaly in a
/// motherset, nominal / anomaly in a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Nominal,
    Anomaly,
}

impl Label {
    #[inline]
    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Nominal => "nominal",
            Label::Anomaly => "anomaly",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Nominal => Label::Anomaly,
            Label::Anomaly => Label::Nominal,
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Label::Nominal),
            "anomaly" => Ok(Label::Anomaly),
            other => Err(Error::Parse(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Classes(Vec<String>),
    Response(Vec<f64>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Classes(c) => c.len(),
            Target::Response(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A parsed, numeric-only dataset with its supervised target.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: String,
    pub feature_names: Vec<String>,
    /// N x d, one row per point.
    pub features: DMatrix<f64>,
    pub target: Target,
    pub task_kind: TaskKind,
    pub dropped_columns: Vec<DroppedColumn>,
    /// Rows discarded for missing feature or target values.
    pub rows_rejected: usize,
}

impl RawDataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Sorted distinct class identifiers (classification targets only).
    pub fn classes(&self) -> Vec<String> {
        match &self.target {
            Target::Classes(c) => {
                let mut v = c.clone();
                v.sort();
                v.dedup();
                v
            }
            Target::Response(_) => Vec::new(),
        }
    }
}

/// A normalized dataset relabeled into candidate normals and anomalies.
#[derive(Debug, Clone, PartialEq)]
pub struct Motherset {
    pub name: String,
    pub feature_names: Vec<String>,
    /// N x d; every column has zero mean and unit sample variance.
    pub features: DMatrix<f64>,
    pub labels: Vec<Label>,
    pub origin: Origin,
    /// Columns removed at load time or for being constant.
    pub dropped_columns: Vec<String>,
    /// Original classes (or response side) forming the candidate anomalies.
    pub anomaly_source: Vec<String>,
    pub seed: Option<u64>,
}

impl Motherset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Normalizes each column to zero mean and unit sample variance, dropping
/// constant columns. Returns the matrix and the indices of kept columns.
pub fn normalize_columns(features: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut stats = Vec::new();
    for j in 0..features.ncols() {
        let (mean, var) = mean_var(features.column(j).iter().copied());
        if var > 0.0 && var.is_finite() {
            kept.push(j);
            stats.push((mean, var.sqrt()));
        }
    }
    let out = DMatrix::from_fn(features.nrows(), kept.len(), |i, k| {
        let (mean, sd) = stats[k];
        (features[(i, kept[k])] - mean) / sd
    });
    (out, kept)
}

fn group_variance(features: &DMatrix<f64>, members: &[usize]) -> f64 {
    (0..features.ncols())
        .map(|j| mean_var(members.iter().map(|&i| features[(i, j)])).1)
        .sum()
}

/// Chooses which of two groups becomes the candidate anomaly class: the
/// smaller one, or on a size tie the one with greater total feature
/// variance. Returns true when `b` is the anomaly side.
fn second_is_anomaly(features: &DMatrix<f64>, a: &[usize], b: &[usize]) -> bool {
    match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => group_variance(features, b) > group_variance(features, a),
    }
}

/// Relabels a raw dataset as a [`Motherset`] and normalizes its features.
/// `seed` drives the random forest used for multiclass partitioning.
pub fn label_candidates(raw: &RawDataset, seed: u64) -> Result<Motherset> {
    let n = raw.n();
    // (name, members) of the two sides before choosing the anomaly side
    let (side_a, side_b): ((Vec<String>, Vec<usize>), (Vec<String>, Vec<usize>)) =
        match (&raw.target, raw.task_kind) {
            (Target::Response(resp), TaskKind::Regression) => {
                let mut sorted = resp.clone();
                let med = crate::linalg::median(&mut sorted);
                if sorted.first() == sorted.last() {
                    return Err(Error::ConstantResponse);
                }
                let (hi, lo): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| resp[i] > med);
                if hi.is_empty() {
                    return Err(Error::EmptyClass("above-median".into()));
                }
                if lo.is_empty() {
                    return Err(Error::EmptyClass("at-or-below-median".into()));
                }
                (
                    (vec!["at-or-below-median".into()], lo),
                    (vec!["above-median".into()], hi),
                )
            }
            (Target::Classes(classes), TaskKind::Binary) => {
                let distinct = raw.classes();
                if distinct.len() != 2 {
                    return Err(Error::InvalidParameter(format!(
                        "binary task needs exactly 2 classes, found {}",
                        distinct.len()
                    )));
                }
                let (a, b): (Vec<usize>, Vec<usize>) =
                    (0..n).partition(|&i| classes[i] == distinct[0]);
                ((vec![distinct[0].clone()], a), (vec![distinct[1].clone()], b))
            }
            (Target::Classes(classes), TaskKind::Multiclass) => {
                let (set_a, set_b) = confusion_partition(raw, seed)?;
                let (a, b): (Vec<usize>, Vec<usize>) =
                    (0..n).partition(|&i| set_a.contains(&classes[i]));
                ((set_a, a), (set_b, b))
            }
            (_, kind) => {
                return Err(Error::InvalidParameter(format!(
                    "target type does not match task kind {kind:?}"
                )))
            }
        };
    for (names, members) in [&side_a, &side_b] {
        if members.is_empty() {
            return Err(Error::EmptyClass(names.join("+")));
        }
    }
    let b_anom = second_is_anomaly(&raw.features, &side_a.1, &side_b.1);
    let (anomaly_names, anomaly_members) = if b_anom { &side_b } else { &side_a };
    let mut labels = vec![Label::Nominal; n];
    for &i in anomaly_members {
        labels[i] = Label::Anomaly;
    }

    let (features, kept) = normalize_columns(&raw.features);
    if kept.is_empty() {
        return Err(Error::NoFeatures);
    }
    let mut dropped: Vec<String> = raw.dropped_columns.iter().map(|c| c.name.clone()).collect();
    dropped.extend(
        (0..raw.d())
            .filter(|j| !kept.contains(j))
            .map(|j| raw.feature_names[j].clone()),
    );
    Ok(Motherset {
        name: raw.name.clone(),
        feature_names: kept.iter().map(|&j| raw.feature_names[j].clone()).collect(),
        features,
        labels,
        origin: raw.task_kind.into(),
        dropped_columns: dropped,
        anomaly_source: anomaly_names.clone(),
        seed: (raw.task_kind == TaskKind::Multiclass).then_some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(features: DMatrix<f64>, target: Target, task_kind: TaskKind) -> RawDataset {
        RawDataset {
            name: "t".into(),
            feature_names: (0..features.ncols()).map(|j| format!("f{j}")).collect(),
            features,
            target,
            task_kind,
            dropped_columns: vec![],
            rows_rejected: 0,
        }
    }

    #[test]
    fn binary_smaller_class_is_anomaly() {
        let n = 1000;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * 31 + j * 7) % 13) as f64);
        let classes = (0..n)
            .map(|i| if i < 700 { "big" } else { "small" }.to_string())
            .collect();
        let m = label_candidates(&raw(x, Target::Classes(classes), TaskKind::Binary), 0).unwrap();
        assert_eq!(m.count(Label::Anomaly), 300);
        assert_eq!(m.anomaly_source, vec!["small".to_string()]);
    }

    #[test]
    fn binary_tie_goes_to_higher_variance() {
        // class "p": values +-sqrt(2) => variance ~2; class "q": +-1 => ~1
        let n = 1000;
        let x = DMatrix::from_fn(n, 1, |i, _| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            if i < 500 {
                sign * 2f64.sqrt()
            } else {
                sign
            }
        });
        let classes = (0..n)
            .map(|i| if i < 500 { "p" } else { "q" }.to_string())
            .collect();
        let m = label_candidates(&raw(x, Target::Classes(classes), TaskKind::Binary), 0).unwrap();
        assert_eq!(m.anomaly_source, vec!["p".to_string()]);
        assert!(m.labels[..500].iter().all(|l| l.is_anomaly()));
    }

    #[test]
    fn regression_median_split() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64 * 1.5 + 0.1);
        let resp = vec![1.0, 2.0, 3.0, 4.0];
        let m = label_candidates(&raw(x, Target::Response(resp), TaskKind::Regression), 0).unwrap();
        // {3,4} vs {1,2}; equal sizes, {3,4} variance equal too so the first
        // side (at-or-below) stays nominal unless strictly less variable
        let hi: Vec<bool> = m.labels.iter().map(|l| l.is_anomaly()).collect();
        assert!(hi == vec![false, false, true, true] || hi == vec![true, true, false, false]);
        assert_eq!(m.count(Label::Anomaly), 2);
    }

    #[test]
    fn regression_ties_at_median_go_low() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64);
        let resp = vec![1.0, 2.0, 2.0, 2.0, 5.0];
        let m = label_candidates(&raw(x, Target::Response(resp), TaskKind::Regression), 0).unwrap();
        // median 2: only the 5 is above
        assert_eq!(m.count(Label::Anomaly), 1);
        assert!(m.labels[4].is_anomaly());
    }

    #[test]
    fn constant_response_is_an_error() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let r = raw(x.clone(), Target::Response(vec![3.0; 4]), TaskKind::Regression);
        assert!(matches!(label_candidates(&r, 0), Err(Error::ConstantResponse)));
        let r = raw(x, Target::Response(vec![1.0, 2.0, 2.0, 2.0]), TaskKind::Regression);
        assert!(matches!(label_candidates(&r, 0), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn normalization_drops_constant_columns() {
        let x = DMatrix::from_fn(6, 3, |i, j| if j == 1 { 4.0 } else { (i * (j + 1)) as f64 });
        let (z, kept) = normalize_columns(&x);
        assert_eq!(kept, vec![0, 2]);
        for j in 0..z.ncols() {
            let (m, v) = mean_var(z.column(j).iter().copied());
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let x = DMatrix::from_fn(50, 4, |i, j| ((i * 17 + j * 5) % 11) as f64 * (j + 1) as f64);
        let (z, _) = normalize_columns(&x);
        let (z2, _) = normalize_columns(&z);
        assert!((z - z2).abs().max() < 1e-9);
    }
}
