//! Null distributions of AUC and AP under uniformly random ranking, the
//! per-result hypothesis test, and benchmark-failure flags.
//!
//! Both metrics depend only on the set of positions the anomalies occupy in
//! the ranking, so the exact null enumerates the `C(n, n_anom)` equally
//! likely position sets rather than all `n!` orderings. Beyond
//! [`NullConfig::exact_limit`] position sets the distribution is sampled.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Significance levels every evaluation row carries verdicts for.
pub const ALPHAS: [f64; 3] = [0.05, 0.01, 0.001];

/// Values closer than this are treated as the same atom of the discrete null.
const ATOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Ap,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Ap => "ap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NullConfig {
    /// Largest number of anomaly position sets enumerated exactly.
    pub exact_limit: u64,
    /// Number of random rankings drawn in Monte-Carlo mode.
    pub mc_samples: u64,
}

impl Default for NullConfig {
    fn default() -> Self {
        NullConfig {
            exact_limit: 1_000_000,
            mc_samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub alpha: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullQuantiles {
    pub n_anom: usize,
    pub n_norm: usize,
    pub metric: Metric,
    pub mode: NullMode,
    /// Number of Monte-Carlo samples; `None` in exact mode.
    pub samples: Option<u64>,
    pub seed: u64,
    pub quantiles: Vec<CriticalValue>,
}

impl NullQuantiles {
    pub fn critical(&self, alpha: f64) -> Option<f64> {
        self.quantiles
            .iter()
            .find(|c| (c.alpha - alpha).abs() < 1e-12)
            .map(|c| c.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// The null hypothesis of random ranking is rejected.
    Reject,
    /// Failed to reject.
    Fail,
}

impl Verdict {
    pub fn is_fail(self) -> bool {
        self == Verdict::Fail
    }
}

/// Number of k-subsets of n items, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// AUC and AP of a ranking where anomalies sit at the given sorted,
/// zero-based positions (position 0 is the highest score).
pub fn metrics_from_positions(positions: &[usize], n: usize) -> (f64, f64) {
    let a = positions.len();
    let n_norm = n - a;
    let mut u = 0usize;
    let mut ap = 0.0;
    for (i, &p) in positions.iter().enumerate() {
        // normals ranked below this anomaly
        u += (n - 1 - p) - (a - 1 - i);
        ap += (i + 1) as f64 / (p + 1) as f64;
    }
    (u as f64 / (a * n_norm) as f64, ap / a as f64)
}

fn check_counts(n_anom: usize, n_norm: usize) -> Result<()> {
    if n_anom == 0 || n_norm == 0 {
        return Err(Error::InvalidParameter(format!(
            "degenerate class counts ({n_anom} anomalies, {n_norm} nominals)"
        )));
    }
    Ok(())
}

/// Draws (or enumerates) the null samples of both metrics.
fn null_samples(
    n_anom: usize,
    n_norm: usize,
    config: &NullConfig,
    seed: u64,
) -> (NullMode, Vec<f64>, Vec<f64>) {
    let n = n_anom + n_norm;
    let combos = binomial(n, n_anom);
    if combos <= config.exact_limit {
        let mut aucs = Vec::with_capacity(combos as usize);
        let mut aps = Vec::with_capacity(combos as usize);
        let mut pos: Vec<usize> = (0..n_anom).collect();
        loop {
            let (a, p) = metrics_from_positions(&pos, n);
            aucs.push(a);
            aps.push(p);
            // next combination in lexicographic order
            let mut i = n_anom;
            loop {
                if i == 0 {
                    return (NullMode::Exact, aucs, aps);
                }
                i -= 1;
                if pos[i] < n - n_anom + i {
                    break;
                }
            }
            pos[i] += 1;
            for j in (i + 1)..n_anom {
                pos[j] = pos[j - 1] + 1;
            }
        }
    }
    let mut rng = seed::rng(seed);
    let mut aucs = Vec::with_capacity(config.mc_samples as usize);
    let mut aps = Vec::with_capacity(config.mc_samples as usize);
    let mut pos = Vec::with_capacity(n_anom);
    for _ in 0..config.mc_samples {
        pos.clear();
        pos.extend(rand::seq::index::sample(&mut rng, n, n_anom));
        pos.sort_unstable();
        let (a, p) = metrics_from_positions(&pos, n);
        aucs.push(a);
        aps.push(p);
    }
    (NullMode::MonteCarlo, aucs, aps)
}

/// Critical values from a sample of the null: for each alpha, the smallest
/// achieved value `v` with `P(X > v) <= alpha`.
pub fn critical_values(mut values: Vec<f64>, alphas: &[f64]) -> Vec<CriticalValue> {
    values.sort_by(f64::total_cmp);
    let total = values.len() as f64;
    // distinct atoms, ascending, with the count of samples strictly above
    let mut atoms: Vec<(f64, usize)> = Vec::new();
    let mut i = values.len();
    while i > 0 {
        let top = values[i - 1];
        let above = values.len() - i;
        let mut j = i - 1;
        while j > 0 && top - values[j - 1] <= ATOM_TOL * top.abs().max(1.0) {
            j -= 1;
        }
        atoms.push((top, above));
        i = j;
    }
    // atoms are in descending order of value here
    alphas
        .iter()
        .map(|&alpha| {
            let budget = alpha * total * (1.0 + 1e-12);
            let mut value = atoms[0].0;
            for &(v, above) in &atoms {
                if above as f64 <= budget {
                    value = v;
                } else {
                    break;
                }
            }
            CriticalValue { alpha, value }
        })
        .collect()
}

/// Null critical values of one metric for the class counts.
pub fn null_quantiles(n_anom: usize, n_norm: usize, metric: Metric, seed: u64) -> Result<NullQuantiles> {
    let [auc, ap] = null_quantiles_with(n_anom, n_norm, &NullConfig::default(), seed)?;
    Ok(match metric {
        Metric::Auc => auc,
        Metric::Ap => ap,
    })
}

/// Both metrics' null critical values from one shared pass over the samples.
pub fn null_quantiles_with(
    n_anom: usize,
    n_norm: usize,
    config: &NullConfig,
    seed: u64,
) -> Result<[NullQuantiles; 2]> {
    check_counts(n_anom, n_norm)?;
    let (mode, aucs, aps) = null_samples(n_anom, n_norm, config, seed);
    let samples = (mode == NullMode::MonteCarlo).then_some(config.mc_samples);
    let make = |metric, values| NullQuantiles {
        n_anom,
        n_norm,
        metric,
        mode,
        samples,
        seed,
        quantiles: critical_values(values, &ALPHAS),
    };
    Ok([make(Metric::Auc, aucs), make(Metric::Ap, aps)])
}

/// Rejects the random-ranking null iff `value` strictly exceeds the critical
/// value at `alpha`.
pub fn test_result(value: f64, nulls: &NullQuantiles, alpha: f64) -> Result<Verdict> {
    let critical = nulls.critical(alpha).ok_or_else(|| {
        Error::InvalidParameter(format!("alpha {alpha} not in the quantile set"))
    })?;
    Ok(if value > critical {
        Verdict::Reject
    } else {
        Verdict::Fail
    })
}

/// A benchmark fails when every detector fails to reject.
pub fn benchmark_failure(verdicts: &[Verdict]) -> Result<bool> {
    if verdicts.is_empty() {
        return Err(Error::Empty("no detector verdicts for benchmark".into()));
    }
    Ok(verdicts.iter().all(|v| v.is_fail()))
}

/// Fails when all detectors fail under at least one of the two metrics.
pub fn benchmark_failure_either(auc: &[Verdict], ap: &[Verdict]) -> Result<bool> {
    Ok(benchmark_failure(auc)? || benchmark_failure(ap)?)
}

/// On-disk cache of null quantiles keyed by `(n_anom, n_norm, metric)`.
///
/// Writes go through a temporary file and an atomic rename, so concurrent
/// writers of the same key leave one complete, identical file behind.
pub struct NullCache {
    dir: PathBuf,
    config: NullConfig,
    master_seed: u64,
    memory: Mutex<HashMap<(usize, usize), [NullQuantiles; 2]>>,
}

impl NullCache {
    pub fn new(dir: impl Into<PathBuf>, config: NullConfig, master_seed: u64) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(NullCache {
            dir,
            config,
            master_seed,
            memory: Mutex::new(HashMap::new()),
        })
    }

    fn path(&self, n_anom: usize, n_norm: usize, metric: Metric) -> PathBuf {
        self.dir
            .join(format!("{}_{}_{}.json", metric.as_str(), n_anom, n_norm))
    }

    fn seed_for(&self, n_anom: usize, n_norm: usize) -> u64 {
        seed::derive_seed(
            self.master_seed,
            &["null", &n_anom.to_string(), &n_norm.to_string()],
        )
    }

    fn read(&self, path: &Path, seed: u64) -> Option<NullQuantiles> {
        let text = fs::read_to_string(path).ok()?;
        let q: NullQuantiles = serde_json::from_str(&text).ok()?;
        let samples_ok = match q.mode {
            NullMode::Exact => true,
            NullMode::MonteCarlo => q.samples == Some(self.config.mc_samples),
        };
        (q.seed == seed && samples_ok).then_some(q)
    }

    /// Returns `[auc, ap]` quantiles, computing and persisting them on a miss.
    pub fn get(&self, n_anom: usize, n_norm: usize) -> Result<[NullQuantiles; 2]> {
        if let Some(hit) = self.memory.lock().unwrap().get(&(n_anom, n_norm)) {
            return Ok(hit.clone());
        }
        let seed = self.seed_for(n_anom, n_norm);
        let on_disk = (
            self.read(&self.path(n_anom, n_norm, Metric::Auc), seed),
            self.read(&self.path(n_anom, n_norm, Metric::Ap), seed),
        );
        let pair = match on_disk {
            (Some(auc), Some(ap)) => [auc, ap],
            _ => {
                let pair = null_quantiles_with(n_anom, n_norm, &self.config, seed)?;
                for q in &pair {
                    let path = self.path(n_anom, n_norm, q.metric);
                    let text = serde_json::to_string_pretty(q)?;
                    write_atomic(&path, text.as_bytes())?;
                }
                pair
            }
        };
        self.memory
            .lock()
            .unwrap()
            .insert((n_anom, n_norm), pair.clone());
        Ok(pair)
    }
}

/// Writes through a uniquely named temporary file and renames into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(10, 1), 10);
        assert_eq!(binomial(10, 5), 252);
        assert_eq!(binomial(100, 10), 17_310_309_456_440);
        assert_eq!(binomial(5, 0), 1);
    }

    #[test]
    fn one_anomaly_in_ten_cannot_reject_at_five_percent() {
        let q = null_quantiles(1, 9, Metric::Auc, 0).unwrap();
        assert_eq!(q.mode, NullMode::Exact);
        assert_eq!(q.critical(0.05), Some(1.0));
        for k in 0..=9 {
            let v = k as f64 / 9.0;
            assert_eq!(test_result(v, &q, 0.05).unwrap(), Verdict::Fail);
        }
    }

    #[test]
    fn strict_inequality_at_critical_value() {
        let q = NullQuantiles {
            n_anom: 3,
            n_norm: 3,
            metric: Metric::Auc,
            mode: NullMode::Exact,
            samples: None,
            seed: 0,
            quantiles: vec![CriticalValue {
                alpha: 0.05,
                value: 0.6,
            }],
        };
        assert_eq!(test_result(0.75, &q, 0.05).unwrap(), Verdict::Reject);
        assert_eq!(test_result(0.6, &q, 0.05).unwrap(), Verdict::Fail);
        assert!(test_result(0.7, &q, 0.01).is_err());
    }

    #[test]
    fn critical_values_are_monotone_in_alpha() {
        for (a, n) in [(2, 8), (5, 5), (3, 17)] {
            let [auc, ap] = null_quantiles_with(a, n, &NullConfig::default(), 1).unwrap();
            for q in [auc, ap] {
                let v: Vec<f64> = q.quantiles.iter().map(|c| c.value).collect();
                assert!(v[0] <= v[1] && v[1] <= v[2], "{v:?}");
            }
        }
    }

    #[test]
    fn auc_null_mean_is_half() {
        let n = 9;
        let a = 3;
        let (_, aucs, _) = null_samples(a, n - a, &NullConfig::default(), 0);
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn failure_flags() {
        use Verdict::*;
        let mut v = vec![Fail; 7];
        v.push(Reject);
        assert!(!benchmark_failure(&v).unwrap());
        let auc = [Fail, Reject, Fail];
        let ap = [Fail, Fail, Fail];
        assert!(!benchmark_failure(&auc).unwrap());
        assert!(benchmark_failure(&ap).unwrap());
        assert!(benchmark_failure_either(&auc, &ap).unwrap());
        assert!(benchmark_failure(&[]).is_err());
    }

    #[test]
    fn degenerate_counts_rejected() {
        assert!(null_quantiles(0, 5, Metric::Auc, 0).is_err());
        assert!(null_quantiles(5, 0, Metric::Ap, 0).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NullConfig {
            exact_limit: 10,
            mc_samples: 2000,
        };
        let cache = NullCache::new(dir.path(), cfg, 3).unwrap();
        let first = cache.get(4, 20).unwrap();
        assert_eq!(first[0].mode, NullMode::MonteCarlo);
        let again = NullCache::new(dir.path(), cfg, 3).unwrap().get(4, 20).unwrap();
        assert_eq!(first, again);
    }
}
