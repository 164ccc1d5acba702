//! Manifest-driven orchestration: `generate`, `run`, `evaluate`, `report`.
//!
//! Stages communicate only through files under the manifest's output root:
//!
//! ```text
//! manifest.toml             effective manifest of the last command
//! mothersets/<m>.csv|json   relabeled, normalized mothersets
//! difficulty/<m>.csv|json   oracle difficulty per point and model selection
//! benchmarks/<m>/<id>.csv|json
//! infeasible.csv            specs that could not be generated, with reasons
//! scores/<id>/<det>.csv|json, <det>.error.json
//! nulls/                    cached null quantiles
//! evaluation.csv
//! report/                   one CSV per table plus report.txt
//! artifacts.json            SHA-256 of every artifact
//! ```

mod evaluate;
mod generate;
mod report;
mod run;

pub use evaluate::{cmd_evaluate, read_evaluation};
pub use generate::{cmd_generate, DifficultyReport, InfeasibleSpec};
pub use report::{cmd_report, ReportOptions};
pub use run::{cmd_run, ErrorRecord, ScoreManifest};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::{DetectorConfig, DetectorKind};
use crate::difficulty::KlrConfig;
use crate::ingest::TaskKind;
use crate::nulltest::{write_atomic, NullConfig, ALPHAS};
use crate::sampler::{BenchmarkSpec, LevelGrid, SamplerConfig};
use crate::seed::{derive_seed, sha256_hex};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const ARTIFACTS_FILE: &str = "artifacts.json";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const INFEASIBLE_FILE: &str = "infeasible.csv";

/// Where a motherset comes from: a CSV with a target column, or the built-in
/// synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MothersetSource {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub synthetic: bool,
}

impl MothersetSource {
    pub fn synthetic() -> Self {
        MothersetSource {
            name: "synthetic".into(),
            path: None,
            target: None,
            task: None,
            synthetic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind) -> Self {
        DetectorSpec {
            kind,
            params: BTreeMap::new(),
        }
    }
}

fn default_root() -> PathBuf {
    PathBuf::from("adbench-out")
}

fn default_replicates() -> u32 {
    5
}

fn default_detectors() -> Vec<DetectorSpec> {
    DetectorKind::ALL.iter().map(|&k| DetectorSpec::new(k)).collect()
}

fn default_alphas() -> Vec<f64> {
    ALPHAS.to_vec()
}

/// Everything that determines a corpus and its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub master_seed: u64,
    #[serde(default = "default_root")]
    pub output_root: PathBuf,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
    /// Significance levels reported; the strictest drives the models.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Worker threads; 0 lets the scheduler pick.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub mothersets: Vec<MothersetSource>,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub levels: LevelGrid,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub oracle: KlrConfig,
    #[serde(default)]
    pub null: NullConfig,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            master_seed: 0,
            output_root: default_root(),
            replicates: default_replicates(),
            alphas: default_alphas(),
            workers: 0,
            mothersets: Vec::new(),
            detectors: default_detectors(),
            levels: LevelGrid::default(),
            sampler: SamplerConfig::default(),
            oracle: KlrConfig::default(),
            null: NullConfig::default(),
        }
    }
}

impl RunManifest {
    /// Parses a TOML manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: RunManifest =
            toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if m.output_root.is_relative() {
            m.output_root = base.join(&m.output_root);
        }
        for s in &mut m.mothersets {
            if let Some(p) = &s.path {
                if p.is_relative() {
                    s.path = Some(base.join(p));
                }
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.mothersets.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Manifest("duplicate motherset names".into()));
        }
        for m in &self.mothersets {
            if m.name.is_empty() || m.name.contains(|c: char| !(c.is_ascii_alphanumeric() || c == '-')) {
                return Err(Error::Manifest(format!(
                    "motherset name `{}` must be non-empty ASCII letters, digits or '-'",
                    m.name
                )));
            }
            if !m.synthetic && (m.path.is_none() || m.target.is_none() || m.task.is_none()) {
                return Err(Error::Manifest(format!(
                    "motherset `{}` needs path, target and task (or synthetic = true)",
                    m.name
                )));
            }
        }
        for d in &self.detectors {
            DetectorConfig {
                kind: d.kind,
                params: d.params.clone(),
                seed: 0,
            }
            .validate()?;
        }
        if self.alphas.is_empty() {
            return Err(Error::Manifest("no alpha levels".into()));
        }
        for &a in &self.alphas {
            crate::analysis::alpha_index(a)?;
        }
        if self.replicates == 0 {
            return Err(Error::Manifest("replicates must be at least 1".into()));
        }
        Ok(())
    }

    /// Strictest requested significance level.
    pub fn model_alpha(&self) -> f64 {
        self.alphas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Every spec of the corpus, mothersets in manifest order.
    pub fn specs(&self) -> Vec<BenchmarkSpec> {
        self.mothersets
            .iter()
            .flat_map(|m| {
                crate::sampler::enumerate_specs(&m.name, &self.levels, self.replicates, self.master_seed)
            })
            .collect()
    }

    pub fn detector_config(&self, d: &DetectorSpec, benchmark: &str) -> DetectorConfig {
        DetectorConfig {
            kind: d.kind,
            params: d.params.clone(),
            seed: derive_seed(self.master_seed, &["run", benchmark, d.kind.as_str()]),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.output_root.clone(),
        }
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
    }
}

/// Paths of every artifact under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn mothersets(&self) -> PathBuf {
        self.root.join("mothersets")
    }

    pub fn motherset_csv(&self, name: &str) -> PathBuf {
        self.mothersets().join(format!("{name}.csv"))
    }

    pub fn difficulty_csv(&self, name: &str) -> PathBuf {
        self.root.join("difficulty").join(format!("{name}.csv"))
    }

    pub fn benchmark_dir(&self, mset: &str) -> PathBuf {
        self.root.join("benchmarks").join(mset)
    }

    pub fn benchmark_csv(&self, spec: &BenchmarkSpec) -> PathBuf {
        self.benchmark_dir(&spec.motherset).join(format!("{}.csv", spec.id()))
    }

    pub fn score_dir(&self, benchmark: &str) -> PathBuf {
        self.root.join("scores").join(benchmark)
    }

    pub fn score_csv(&self, benchmark: &str, detector: DetectorKind) -> PathBuf {
        self.score_dir(benchmark).join(format!("{}.csv", detector.as_str()))
    }

    pub fn error_record(&self, benchmark: &str, detector: DetectorKind) -> PathBuf {
        self.score_dir(benchmark)
            .join(format!("{}.error.json", detector.as_str()))
    }

    pub fn nulls(&self) -> PathBuf {
        self.root.join("nulls")
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join(EVALUATION_FILE)
    }

    pub fn infeasible(&self) -> PathBuf {
        self.root.join(INFEASIBLE_FILE)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Result of a command that completed, possibly with isolated failures.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    /// Units of work done in this invocation.
    pub completed: usize,
    /// Units found already done and skipped.
    pub skipped: usize,
    /// Isolated failures, one message each.
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Process exit status: 0 complete, 2 partial.
    pub fn exit_code(&self) -> i32 {
        if self.is_partial() {
            2
        } else {
            0
        }
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the effective manifest next to the artifacts it produced.
pub(crate) fn save_manifest(m: &RunManifest) -> Result<()> {
    let layout = m.layout();
    ensure_dir(&layout.root)?;
    write_atomic(&layout.manifest(), m.to_toml()?.as_bytes())
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
            continue;
        }
        let name = e.file_name().to_string_lossy().into_owned();
        if name == ARTIFACTS_FILE || name.contains(".tmp.") {
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("walked below root")
            .to_string_lossy()
            .replace('\\', "/");
        out.push((rel, path));
    }
    Ok(())
}

/// Hashes every artifact under the root into `artifacts.json`.
pub fn record_artifacts(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    let mut map = BTreeMap::new();
    for (rel, path) in files {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        map.insert(rel, sha256_hex(&bytes));
    }
    write_atomic(&root.join(ARTIFACTS_FILE), &serde_json::to_vec_pretty(&map)?)?;
    Ok(map)
}

/// Artifacts that are missing or no longer match their recorded hash.
pub fn verify_artifacts(root: &Path) -> Result<Vec<String>> {
    let path = root.join(ARTIFACTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let map: BTreeMap<String, String> = serde_json::from_str(&text)?;
    let mut bad = Vec::new();
    for (rel, hash) in map {
        match fs::read(root.join(&rel)) {
            Ok(bytes) if sha256_hex(&bytes) == hash => {}
            Ok(_) => bad.push(format!("{rel}: hash mismatch")),
            Err(_) => bad.push(format!("{rel}: missing")),
        }
    }
    Ok(bad)
}
