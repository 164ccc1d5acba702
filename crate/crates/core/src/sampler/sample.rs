use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::augment::augment_irrelevant;
use super::io::BenchmarkManifest;
use super::{Benchmark, BenchmarkSpec, Measured};
use crate::ingest::{Label, Motherset};
use crate::linalg::{sq_dist, to_rows, total_variance};
use crate::seed::{derive_seed, rng};
use crate::{Error, Result};

/// Variances at or below this are treated as zero.
const ZERO_VAR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Global cap on benchmark size.
    pub max_size: usize,
    /// Consecutive infeasible draws that end sampling.
    pub max_rejections: usize,
    /// Feasible candidates weighed against each other when clusteredness is
    /// constrained.
    pub nc_batch: usize,
    /// Points used to estimate the mean pairwise distance.
    pub distance_points: usize,
    /// Allowed gap between the measured distance ratio and its target.
    pub ratio_tolerance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_size: 6000,
            max_rejections: 10_000,
            nc_batch: 8,
            distance_points: 1000,
            ratio_tolerance: 0.05,
        }
    }
}

/// Largest number of candidate normals a benchmark may use (90%).
pub(crate) fn normal_cap(candidate_normals: usize) -> usize {
    candidate_normals * 9 / 10
}

/// Whether `n_anom` of `n` matches the rate `r` up to rounding.
pub(crate) fn rf_matches(n_anom: usize, n: usize, r: f64) -> bool {
    (n_anom as f64 - r * n as f64).abs() <= 0.5 + 1e-9
}

/// `log(var_n / var_a)` of two point sets, using total sample variance.
/// Identical anomalies give `+inf`.
pub fn clusteredness(normals: &[&[f64]], anomalies: &[&[f64]]) -> Result<f64> {
    for set in [normals, anomalies] {
        if set.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: set.len(),
            });
        }
    }
    Ok(nc_from_vars(total_variance(normals), total_variance(anomalies)))
}

fn nc_from_vars(var_n: f64, var_a: f64) -> f64 {
    if var_a <= ZERO_VAR {
        f64::INFINITY
    } else if var_n <= ZERO_VAR {
        f64::NEG_INFINITY
    } else {
        (var_n / var_a).ln()
    }
}

/// Running mean and sum of squared deviations of one class.
#[derive(Debug, Clone)]
struct ClassStats {
    n: usize,
    mean: Vec<f64>,
    m2: f64,
}

impl ClassStats {
    fn new(d: usize) -> Self {
        ClassStats {
            n: 0,
            mean: vec![0.0; d],
            m2: 0.0,
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.m2 = self.m2_added(x);
        self.n += 1;
        let nf = self.n as f64;
        for (m, v) in self.mean.iter_mut().zip(x) {
            *m += (v - *m) / nf;
        }
    }

    fn remove(&mut self, x: &[f64]) {
        self.m2 = self.m2_removed(x);
        self.n -= 1;
        if self.n == 0 {
            self.mean.iter_mut().for_each(|m| *m = 0.0);
            return;
        }
        let nf = self.n as f64;
        for (m, v) in self.mean.iter_mut().zip(x) {
            *m -= (v - *m) / nf;
        }
    }

    fn m2_added(&self, x: &[f64]) -> f64 {
        let n = self.n as f64;
        self.m2 + n / (n + 1.0) * sq_dist(x, &self.mean)
    }

    fn m2_removed(&self, x: &[f64]) -> f64 {
        if self.n <= 2 {
            return 0.0;
        }
        let n = self.n as f64;
        (self.m2 - n / (n - 1.0) * sq_dist(x, &self.mean)).max(0.0)
    }
}

fn variance(n: usize, m2: f64) -> Option<f64> {
    (n >= 2).then(|| m2 / (n - 1) as f64)
}

fn class(label: Label) -> usize {
    label.is_anomaly() as usize
}

struct State<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [Label],
    difficulty: &'a [f64],
    selected: Vec<usize>,
    stats: [ClassStats; 2],
    diff_sum: f64,
}

impl<'a> State<'a> {
    fn nc_with(&self, c: usize, n: usize, m2: f64) -> Option<f64> {
        let (vn, va) = if c == 0 {
            (variance(n, m2), variance(self.stats[1].n, self.stats[1].m2))
        } else {
            (variance(self.stats[0].n, self.stats[0].m2), variance(n, m2))
        };
        Some(nc_from_vars(vn?, va?))
    }

    fn nc(&self) -> Option<f64> {
        self.nc_with(0, self.stats[0].n, self.stats[0].m2)
    }

    fn nc_added(&self, i: usize) -> Option<f64> {
        let c = class(self.labels[i]);
        let s = &self.stats[c];
        self.nc_with(c, s.n + 1, s.m2_added(&self.rows[i]))
    }

    fn nc_removed(&self, i: usize) -> Option<f64> {
        let c = class(self.labels[i]);
        let s = &self.stats[c];
        self.nc_with(c, s.n - 1, s.m2_removed(&self.rows[i]))
    }

    fn add(&mut self, i: usize) {
        self.stats[class(self.labels[i])].add(&self.rows[i]);
        self.diff_sum += self.difficulty[i];
        self.selected.push(i);
    }

    fn remove_at(&mut self, pos: usize) {
        let i = self.selected.remove(pos);
        self.stats[class(self.labels[i])].remove(&self.rows[i]);
        self.diff_sum -= self.difficulty[i];
    }

    fn count(&self, c: usize) -> usize {
        self.stats[c].n
    }
}

/// Class budgets `[normals, anomalies]` and the total size limit.
fn budgets(spec: &BenchmarkSpec, normals: usize, anomalies: usize, cfg: &SamplerConfig) -> Result<([usize; 2], usize)> {
    let ncap = normal_cap(normals);
    let min_class = if spec.nc.is_control() { 1 } else { 2 };
    match spec.rf.rate() {
        None => Ok(([ncap.min(cfg.max_size), anomalies], cfg.max_size.min(ncap + anomalies))),
        Some(r) => {
            for n in (1..=cfg.max_size.min(ncap + anomalies)).rev() {
                let a = (r * n as f64).round() as usize;
                if a >= min_class && a <= anomalies && n - a <= ncap && n - a >= min_class {
                    return Ok(([n - a, a], n));
                }
            }
            Err(Error::Infeasible(format!(
                "{}: no size satisfies {} with {} candidate anomalies",
                spec.id(),
                spec.rf,
                anomalies
            )))
        }
    }
}

/// Draws a benchmark one point at a time, rejecting points that would break
/// the pd bin, a class budget or the clusteredness sign, then trims the
/// over-represented class until the relative frequency holds.
pub fn sample_benchmark(mset: &Motherset, difficulty: &[f64], spec: &BenchmarkSpec, cfg: &SamplerConfig) -> Result<Benchmark> {
    if difficulty.len() != mset.n() {
        return Err(Error::DimensionMismatch {
            expected: mset.n(),
            got: difficulty.len(),
        });
    }
    let rows = to_rows(&mset.features);
    let normals = mset.count(Label::Nominal);
    let anomalies = mset.count(Label::Anomaly);
    let (budget, total) = budgets(spec, normals, anomalies, cfg)?;
    let mut r = rng(spec.seed);

    let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in mset.labels.iter().enumerate() {
        pools[class(l)].push(i);
    }
    let mut st = State {
        rows: &rows,
        labels: &mset.labels,
        difficulty,
        selected: Vec::new(),
        stats: [ClassStats::new(mset.d()), ClassStats::new(mset.d())],
        diff_sum: 0.0,
    };
    let sign = spec.nc.sign();
    let batch = if sign.is_some() { cfg.nc_batch.max(1) } else { 1 };

    let feasible = |st: &State, i: usize| -> Option<f64> {
        let n = st.selected.len() as f64;
        if !spec.pd.is_control() && !spec.pd.contains((st.diff_sum + difficulty[i]) / (n + 1.0)) {
            return None;
        }
        let Some(s) = sign else { return Some(0.0) };
        let Some(after) = st.nc_added(i) else { return Some(0.0) };
        if after.is_infinite() {
            return None;
        }
        match st.nc() {
            Some(before) if before.is_finite() => {
                // never cross to the wrong side; while on the wrong side only improve
                if s * after > 0.0 || (s * before <= 0.0 && s * after > s * before) {
                    Some((s * (after - before)).max(0.0))
                } else {
                    None
                }
            }
            _ => (s * after > 0.0).then_some(0.0),
        }
    };

    let mut rejections = 0usize;
    loop {
        if st.selected.len() >= total {
            break;
        }
        let open: Vec<usize> = (0..2)
            .filter(|&c| st.count(c) < budget[c] && !pools[c].is_empty())
            .collect();
        let available: usize = open.iter().map(|&c| pools[c].len()).sum();
        if available == 0 || rejections >= cfg.max_rejections {
            break;
        }
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        let mut draws = 0;
        while cands.len() < batch && draws < 4 * batch && rejections < cfg.max_rejections {
            draws += 1;
            let mut u = r.random_range(0..available);
            let mut c = open[0];
            if u >= pools[c].len() {
                u -= pools[c].len();
                c = open[1];
            }
            if cands.iter().any(|&(cc, p, _)| cc == c && p == u) {
                continue;
            }
            match feasible(&st, pools[c][u]) {
                Some(gain) => cands.push((c, u, gain)),
                None => rejections += 1,
            }
        }
        if cands.is_empty() {
            continue;
        }
        rejections = 0;
        let pick = if cands.len() == 1 {
            0
        } else {
            let weights: Vec<f64> = cands.iter().map(|c| 1.0 + c.2).collect();
            let mut t = r.random::<f64>() * weights.iter().sum::<f64>();
            let mut k = 0;
            while k + 1 < weights.len() && t >= weights[k] {
                t -= weights[k];
                k += 1;
            }
            k
        };
        let (c, u, _) = cands[pick];
        let i = pools[c].swap_remove(u);
        st.add(i);
    }

    if let Some(rate) = spec.rf.rate() {
        let min_class = if sign.is_some() { 2 } else { 1 };
        while !rf_matches(st.count(1), st.selected.len(), rate) {
            let over = (st.count(1) as f64 > rate * st.selected.len() as f64) as usize;
            if st.count(over) <= min_class {
                break;
            }
            let removable = |st: &State, i: usize| -> bool {
                let n = st.selected.len() as f64 - 1.0;
                if !spec.pd.is_control() && !spec.pd.contains((st.diff_sum - difficulty[i]) / n) {
                    return false;
                }
                match sign {
                    None => true,
                    Some(s) => st.nc_removed(i).is_some_and(|v| v.is_finite() && s * v > 0.0),
                }
            };
            let pos = (0..st.selected.len())
                .rev()
                .find(|&p| class(mset.labels[st.selected[p]]) == over && removable(&st, st.selected[p]));
            match pos {
                Some(p) => st.remove_at(p),
                None => break,
            }
        }
    }

    finish(mset, difficulty, spec, cfg, st.selected, normals)
}

fn finish(
    mset: &Motherset,
    difficulty: &[f64],
    spec: &BenchmarkSpec,
    cfg: &SamplerConfig,
    selected: Vec<usize>,
    candidate_normals: usize,
) -> Result<Benchmark> {
    let labels: Vec<Label> = selected.iter().map(|&i| mset.labels[i]).collect();
    let n = labels.len();
    let n_anom = labels.iter().filter(|l| l.is_anomaly()).count();
    if n_anom == 0 || n_anom == n {
        return Err(Error::Infeasible(format!(
            "{}: sampled {} anomalies among {} points",
            spec.id(),
            n_anom,
            n
        )));
    }
    let features = DMatrix::from_fn(n, mset.d(), |r, c| mset.features[(selected[r], c)]);
    let rows = to_rows(&features);
    let (nrm, anm): (Vec<usize>, Vec<usize>) = (0..n).partition(|&k| !labels[k].is_anomaly());
    let nrm: Vec<&[f64]> = nrm.iter().map(|&k| rows[k].as_slice()).collect();
    let anm: Vec<&[f64]> = anm.iter().map(|&k| rows[k].as_slice()).collect();
    let measured = Measured {
        mean_difficulty: selected.iter().map(|&i| difficulty[i]).sum::<f64>() / n as f64,
        anomaly_fraction: n_anom as f64 / n as f64,
        clusteredness: clusteredness(&nrm, &anm).ok(),
        distance_ratio: 1.0,
    };
    let bench = Benchmark {
        spec: spec.clone(),
        features,
        labels,
        source_indices: selected,
        irrelevant_sources: Vec::new(),
        measured,
        candidate_normals,
        max_size: cfg.max_size,
    };
    let violations = BenchmarkManifest::of(&bench, "").violations(None, cfg.ratio_tolerance);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Infeasible(format!("{}: {}", spec.id(), text.join("; "))));
    }
    Ok(bench)
}

/// Samples a benchmark, appends irrelevant features for its fi level and
/// checks every invariant.
pub fn generate_benchmark(mset: &Motherset, difficulty: &[f64], spec: &BenchmarkSpec, cfg: &SamplerConfig) -> Result<Benchmark> {
    let bench = sample_benchmark(mset, difficulty, spec, cfg)?;
    let bench = augment_irrelevant(
        &bench,
        spec.fi.alpha(),
        mset,
        derive_seed(spec.seed, &["irrelevant"]),
        cfg.distance_points,
    )?;
    let violations = BenchmarkManifest::of(&bench, "").violations(Some(spec.fi.alpha()), cfg.ratio_tolerance);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Infeasible(format!("{}: {}", spec.id(), text.join("; "))));
    }
    Ok(bench)
}
