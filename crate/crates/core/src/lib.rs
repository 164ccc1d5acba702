//! Anomaly-detection benchmark synthesis and evaluation.
//!
//! The crate turns labeled tabular datasets ("mothersets") into corpora of
//! anomaly-detection benchmarks with controlled point difficulty, relative
//! frequency, clusteredness and feature irrelevance, runs a suite of
//! unsupervised detectors over them, and evaluates the results against
//! exact random-ranking null distributions.
//!
//! The pipeline stages map onto modules:
//!
//! - [`ingest`]: load and relabel datasets, build the synthetic motherset.
//! - [`difficulty`]: kernel logistic regression oracle for point difficulty.
//! - [`sampler`]: benchmark construction under problem-dimension constraints.
//! - [`detectors`]: the scoring algorithms.
//! - [`metrics`] and [`nulltest`]: AUC / AP, their null distributions and tests.
//! - [`analysis`]: failure-rate tables, mean performance, contrasts and OLS.
//! - [`pipeline`]: manifest-driven orchestration used by the CLI.

pub mod analysis;
pub mod detectors;
pub mod difficulty;
mod error;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod nulltest;
pub mod pipeline;
pub mod sampler;
pub mod seed;

pub use error::{Error, Result};

pub use detectors::{DetectorConfig, DetectorKind, ScoreVector};
pub use difficulty::{DifficultyOracle, KlrConfig};
pub use ingest::{Label, Motherset, Origin, RawDataset, TaskKind};
pub use metrics::MetricRecord;
pub use nulltest::{Metric, NullQuantiles, Verdict};
pub use sampler::{Benchmark, BenchmarkSpec, FiLevel, NcLevel, PdLevel, RfLevel};
