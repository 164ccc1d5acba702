//! Benchmark construction: level grids, constrained sampling from a
//! motherset, irrelevant-feature augmentation and benchmark files.

mod augment;
mod io;
mod levels;
mod sample;

pub use augment::{augment_irrelevant, estimated_dimension, DistanceEstimator};
pub use io::{read_benchmark, read_manifest, write_benchmark, BenchmarkManifest, LoadedBenchmark, Violation};
pub use levels::{enumerate_specs, BenchmarkSpec, FiLevel, LevelGrid, NcLevel, PdLevel, RfLevel};
pub use sample::{clusteredness, generate_benchmark, sample_benchmark, SamplerConfig};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ingest::Label;

/// Problem-dimension values measured on a finished benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub mean_difficulty: f64,
    pub anomaly_fraction: f64,
    /// `None` when a class has fewer than two points.
    pub clusteredness: Option<f64>,
    pub distance_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    /// n x d' feature matrix; irrelevant features follow the originals.
    pub features: DMatrix<f64>,
    pub labels: Vec<Label>,
    /// Motherset row of each point.
    pub source_indices: Vec<usize>,
    /// Motherset column each appended irrelevant feature was drawn from.
    pub irrelevant_sources: Vec<usize>,
    pub measured: Measured,
    /// Candidate normals available in the motherset.
    pub candidate_normals: usize,
    /// Size cap in force when the benchmark was drawn.
    pub max_size: usize,
}

impl Benchmark {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_anomalies(&self) -> usize {
        self.labels.iter().filter(|l| l.is_anomaly()).count()
    }
}
