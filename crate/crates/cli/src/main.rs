use std::path::PathBuf;
use std::process::ExitCode;

use adbench_core::analysis::Filter;
use adbench_core::pipeline::{
    cmd_evaluate, cmd_generate, cmd_report, cmd_run, DetectorSpec, MothersetSource, Outcome, ReportOptions,
    RunManifest, MANIFEST_FILE,
};
use adbench_core::sampler::LevelGrid;
use adbench_core::DetectorKind;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Generate anomaly-detection benchmarks, score them and analyse the results.
#[derive(Parser)]
#[command(name = "adbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relabel mothersets, fit difficulty oracles and sample benchmarks.
    Generate(Common),
    /// Score every (benchmark, detector) pair; resumable.
    Run(Common),
    /// Compute metrics, null-test verdicts and failure flags.
    Evaluate(Common),
    /// Write failure, performance, contrast and regression tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Conditional mean-performance table, e.g. `fi=fi-3` or `nc>0.25`.
        #[arg(long, num_args = 1..)]
        filter: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Run manifest (TOML). Without it, `<out>/manifest.toml` is used when present.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output root, overriding the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Level restrictions such as `rf=rf-4 pd=pd-0,pd-1`.
    #[arg(long, num_args = 1..)]
    levels: Vec<String>,
    #[arg(long)]
    replicates: Option<u32>,
    /// Comma-separated detector names.
    #[arg(long, value_delimiter = ',')]
    detectors: Vec<String>,
    /// Comma-separated significance levels.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Add the synthetic motherset.
    #[arg(long)]
    synthetic: bool,
}

impl Common {
    fn manifest(&self) -> Result<RunManifest> {
        let mut m = match (&self.manifest, &self.out) {
            (Some(path), _) => RunManifest::load(path)?,
            (None, out) => {
                let root = out.clone().unwrap_or_else(|| RunManifest::default().output_root);
                let saved = root.join(MANIFEST_FILE);
                if saved.exists() {
                    RunManifest::load(&saved).with_context(|| format!("reading {}", saved.display()))?
                } else {
                    RunManifest::default()
                }
            }
        };
        if let Some(out) = &self.out {
            m.output_root = out.clone();
        }
        if let Some(seed) = self.seed {
            m.master_seed = seed;
        }
        if !self.levels.is_empty() {
            m.levels = LevelGrid::parse(&self.levels)?;
        }
        if let Some(r) = self.replicates {
            m.replicates = r;
        }
        if !self.detectors.is_empty() {
            let mut specs = Vec::new();
            for name in &self.detectors {
                let kind: DetectorKind = name.trim().parse()?;
                let existing = m.detectors.iter().find(|d| d.kind == kind).cloned();
                specs.push(existing.unwrap_or_else(|| DetectorSpec::new(kind)));
            }
            m.detectors = specs;
        }
        if !self.alpha.is_empty() {
            m.alphas = self.alpha.clone();
        }
        if let Some(w) = self.workers {
            m.workers = w;
        }
        if self.synthetic && !m.mothersets.iter().any(|s| s.synthetic) {
            m.mothersets.push(MothersetSource::synthetic());
        }
        m.validate()?;
        Ok(m)
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    Ok(match cli.command {
        Command::Generate(c) => cmd_generate(&c.manifest()?)?,
        Command::Run(c) => cmd_run(&c.manifest()?)?,
        Command::Evaluate(c) => cmd_evaluate(&c.manifest()?)?,
        Command::Report { common, filter } => {
            let filters = filter
                .iter()
                .map(|f| Filter::parse(&[f]))
                .collect::<adbench_core::Result<Vec<_>>>()?;
            cmd_report(&common.manifest()?, &ReportOptions { filters })?
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(outcome) => {
            for f in &outcome.failures {
                log::warn!("{f}");
            }
            println!(
                "done: {} completed, {} skipped, {} failed",
                outcome.completed,
                outcome.skipped,
                outcome.failures.len()
            );
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
