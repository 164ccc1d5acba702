//! Aggregation of evaluation records: failure rates, mean performance,
//! best-detector contrasts against control levels, and fixed-effects OLS.
//!
//! Only non-trivial detectors decide benchmark failure and enter contrasts and
//! regressions; the trivial baseline is reported alongside in mean tables.

mod ols;
mod table;

pub use ols::{
    ablation_table,
    ablation_r2, least_squares, ols_fit, AblationRow, Design, FactorFrame, FrameRow, OlsFit,
    Variable,
};
pub use table::Table;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorKind;
use crate::ingest::Origin;
use crate::nulltest::{Metric, ALPHAS};
use crate::sampler::{FiLevel, NcLevel, PdLevel, RfLevel};
use crate::{Error, Result};

pub(crate) use table::fmt4;

/// Two-sided standard normal quantile for a 0.999 interval.
pub const Z_999: f64 = 3.2905;

/// One row of the evaluation table: a detector's result on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub benchmark: String,
    pub mset: String,
    pub origin: Origin,
    pub pd: PdLevel,
    pub rf: RfLevel,
    pub nc: NcLevel,
    pub fi: FiLevel,
    pub replicate: u32,
    pub n: usize,
    pub n_anom: usize,
    pub mean_difficulty: f64,
    pub anomaly_fraction: f64,
    pub clusteredness: Option<f64>,
    pub distance_ratio: f64,
    pub detector: DetectorKind,
    pub auc: f64,
    pub ap: f64,
    pub expected_ap: f64,
    pub logit_auc: f64,
    pub log_lift: f64,
    pub trivial_log_ratio_auc: Option<f64>,
    pub trivial_log_ratio_ap: Option<f64>,
    #[serde(rename = "reject_auc_0.05")]
    pub reject_auc_05: bool,
    #[serde(rename = "reject_auc_0.01")]
    pub reject_auc_01: bool,
    #[serde(rename = "reject_auc_0.001")]
    pub reject_auc_001: bool,
    #[serde(rename = "reject_ap_0.05")]
    pub reject_ap_05: bool,
    #[serde(rename = "reject_ap_0.01")]
    pub reject_ap_01: bool,
    #[serde(rename = "reject_ap_0.001")]
    pub reject_ap_001: bool,
    #[serde(rename = "failed_auc_0.05")]
    pub failed_auc_05: bool,
    #[serde(rename = "failed_auc_0.01")]
    pub failed_auc_01: bool,
    #[serde(rename = "failed_auc_0.001")]
    pub failed_auc_001: bool,
    #[serde(rename = "failed_ap_0.05")]
    pub failed_ap_05: bool,
    #[serde(rename = "failed_ap_0.01")]
    pub failed_ap_01: bool,
    #[serde(rename = "failed_ap_0.001")]
    pub failed_ap_001: bool,
    #[serde(rename = "failed_either_0.05")]
    pub failed_either_05: bool,
    #[serde(rename = "failed_either_0.01")]
    pub failed_either_01: bool,
    #[serde(rename = "failed_either_0.001")]
    pub failed_either_001: bool,
}

/// Which verdicts a benchmark failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Auc,
    Ap,
    Either,
}

impl FailureKind {
    pub const ALL: [FailureKind; 3] = [FailureKind::Auc, FailureKind::Ap, FailureKind::Either];
}

pub fn alpha_index(alpha: f64) -> Result<usize> {
    ALPHAS
        .iter()
        .position(|&a| (a - alpha).abs() < 1e-12)
        .ok_or_else(|| Error::InvalidParameter(format!("alpha {alpha} is not one of {ALPHAS:?}")))
}

impl EvalRow {
    pub fn rejects(&self, metric: Metric, alpha: f64) -> Result<bool> {
        let i = alpha_index(alpha)?;
        let v = match metric {
            Metric::Auc => [self.reject_auc_05, self.reject_auc_01, self.reject_auc_001],
            Metric::Ap => [self.reject_ap_05, self.reject_ap_01, self.reject_ap_001],
        };
        Ok(v[i])
    }

    pub fn set_reject(&mut self, metric: Metric, alpha: f64, value: bool) -> Result<()> {
        let slot = match (metric, alpha_index(alpha)?) {
            (Metric::Auc, 0) => &mut self.reject_auc_05,
            (Metric::Auc, 1) => &mut self.reject_auc_01,
            (Metric::Auc, _) => &mut self.reject_auc_001,
            (Metric::Ap, 0) => &mut self.reject_ap_05,
            (Metric::Ap, 1) => &mut self.reject_ap_01,
            (Metric::Ap, _) => &mut self.reject_ap_001,
        };
        *slot = value;
        Ok(())
    }

    /// Benchmark-level failure flag carried on every row of the benchmark.
    pub fn failed(&self, kind: FailureKind, alpha: f64) -> Result<bool> {
        let i = alpha_index(alpha)?;
        let v = match kind {
            FailureKind::Auc => [self.failed_auc_05, self.failed_auc_01, self.failed_auc_001],
            FailureKind::Ap => [self.failed_ap_05, self.failed_ap_01, self.failed_ap_001],
            FailureKind::Either => [
                self.failed_either_05,
                self.failed_either_01,
                self.failed_either_001,
            ],
        };
        Ok(v[i])
    }

    pub fn set_failed(&mut self, kind: FailureKind, alpha: f64, value: bool) -> Result<()> {
        let slot = match (kind, alpha_index(alpha)?) {
            (FailureKind::Auc, 0) => &mut self.failed_auc_05,
            (FailureKind::Auc, 1) => &mut self.failed_auc_01,
            (FailureKind::Auc, _) => &mut self.failed_auc_001,
            (FailureKind::Ap, 0) => &mut self.failed_ap_05,
            (FailureKind::Ap, 1) => &mut self.failed_ap_01,
            (FailureKind::Ap, _) => &mut self.failed_ap_001,
            (FailureKind::Either, 0) => &mut self.failed_either_05,
            (FailureKind::Either, 1) => &mut self.failed_either_01,
            (FailureKind::Either, _) => &mut self.failed_either_001,
        };
        *slot = value;
        Ok(())
    }

    pub fn is_trivial(&self) -> bool {
        self.detector == DetectorKind::Trivial
    }
}

/// Benchmark-failure flags from the per-detector verdicts of one benchmark.
///
/// The trivial baseline does not vote. Rows are updated in place.
pub fn mark_failures(rows: &mut [EvalRow]) -> Result<()> {
    let voters: Vec<&EvalRow> = rows.iter().filter(|r| !r.is_trivial()).collect();
    if voters.is_empty() {
        return Err(Error::Empty(format!(
            "no non-trivial detector results for benchmark {}",
            rows.first().map(|r| r.benchmark.as_str()).unwrap_or("?")
        )));
    }
    let mut flags = Vec::new();
    for &alpha in &ALPHAS {
        let mut all_fail = [true; 2];
        for r in &voters {
            all_fail[0] &= !r.rejects(Metric::Auc, alpha)?;
            all_fail[1] &= !r.rejects(Metric::Ap, alpha)?;
        }
        flags.push((alpha, all_fail));
    }
    for r in rows.iter_mut() {
        for &(alpha, [auc, ap]) in &flags {
            r.set_failed(FailureKind::Auc, alpha, auc)?;
            r.set_failed(FailureKind::Ap, alpha, ap)?;
            r.set_failed(FailureKind::Either, alpha, auc || ap)?;
        }
    }
    Ok(())
}

/// Grouping factors of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    Mset,
    Origin,
    Rf,
    Pd,
    Nc,
    Fi,
    Algo,
}

impl Factor {
    /// The construction factors that get a failure table.
    pub const CONSTRUCTION: [Factor; 6] = [
        Factor::Mset,
        Factor::Origin,
        Factor::Rf,
        Factor::Pd,
        Factor::Nc,
        Factor::Fi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Mset => "mset",
            Factor::Origin => "origin",
            Factor::Rf => "rf",
            Factor::Pd => "pd",
            Factor::Nc => "nc",
            Factor::Fi => "fi",
            Factor::Algo => "algo",
        }
    }

    pub fn level(self, row: &EvalRow) -> String {
        match self {
            Factor::Mset => row.mset.clone(),
            Factor::Origin => row.origin.as_str().to_string(),
            Factor::Rf => row.rf.to_string(),
            Factor::Pd => row.pd.to_string(),
            Factor::Nc => row.nc.to_string(),
            Factor::Fi => row.fi.to_string(),
            Factor::Algo => row.detector.as_str().to_string(),
        }
    }

    /// Control level of a construction factor, if it has one.
    pub fn control(self) -> Option<String> {
        match self {
            Factor::Rf => Some(RfLevel::all()[0].to_string()),
            Factor::Pd => Some(PdLevel::all()[0].to_string()),
            Factor::Nc => Some(NcLevel::all()[0].to_string()),
            Factor::Fi => Some(FiLevel::all()[0].to_string()),
            _ => None,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mset" => Factor::Mset,
            "origin" => Factor::Origin,
            "rf" => Factor::Rf,
            "pd" => Factor::Pd,
            "nc" | "cl" => Factor::Nc,
            "fi" | "ir" => Factor::Fi,
            "algo" | "detector" => Factor::Algo,
            other => return Err(Error::Parse(format!("unknown factor `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Clause {
    Levels(Factor, Vec<String>),
    Above(Measure, f64),
    Below(Measure, f64),
}

/// Measured real-valued benchmark properties usable in threshold filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Measure {
    Rf,
    Pd,
    Nc,
    Ir,
}

impl Measure {
    fn value(self, row: &EvalRow) -> Option<f64> {
        match self {
            Measure::Rf => Some(row.anomaly_fraction),
            Measure::Pd => Some(row.mean_difficulty),
            Measure::Nc => row.clusteredness,
            Measure::Ir => Some(row.distance_ratio),
        }
    }
}

/// Conjunction of row predicates: `fi=fi-3`, `pd=pd-1,pd-2`, `nc>0.25`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    clauses: Vec<Clause>,
    text: Vec<String>,
}

impl Filter {
    pub fn parse<S: AsRef<str>>(exprs: &[S]) -> Result<Self> {
        let mut f = Filter::default();
        for e in exprs {
            let e = e.as_ref().trim();
            let clause = if let Some((k, v)) = e.split_once('=') {
                let factor: Factor = k.trim().parse()?;
                let levels = v.split(',').map(|s| s.trim().to_string()).collect();
                Clause::Levels(factor, levels)
            } else if let Some((k, v)) = e.split_once('>') {
                Clause::Above(measure(k)?, threshold(v)?)
            } else if let Some((k, v)) = e.split_once('<') {
                Clause::Below(measure(k)?, threshold(v)?)
            } else {
                return Err(Error::Parse(format!("bad filter `{e}`")));
            };
            f.clauses.push(clause);
            f.text.push(e.to_string());
        }
        Ok(f)
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn matches(&self, row: &EvalRow) -> bool {
        self.clauses.iter().all(|c| match c {
            Clause::Levels(f, levels) => {
                let l = f.level(row);
                levels.contains(&l)
            }
            Clause::Above(m, t) => m.value(row).is_some_and(|v| v > *t),
            Clause::Below(m, t) => m.value(row).is_some_and(|v| v < *t),
        })
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.text.is_empty() {
            f.write_str("all")
        } else {
            f.write_str(&self.text.join(" & "))
        }
    }
}

fn measure(k: &str) -> Result<Measure> {
    Ok(match k.trim() {
        "rf" => Measure::Rf,
        "pd" => Measure::Pd,
        "nc" | "cl" => Measure::Nc,
        "ir" | "fi" => Measure::Ir,
        other => return Err(Error::Parse(format!("no measured value `{other}`"))),
    })
}

fn threshold(v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad threshold `{v}`")))
}

/// Rows grouped by benchmark id, in id order.
pub fn by_benchmark(rows: &[EvalRow]) -> BTreeMap<&str, Vec<&EvalRow>> {
    let mut map: BTreeMap<&str, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.benchmark.as_str()).or_default().push(r);
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureRow {
    pub level: String,
    pub benchmarks: usize,
    /// Failure fraction under AUC, AP and either metric.
    pub rates: [f64; 3],
    pub above_global: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureTable {
    pub factor: Factor,
    pub alpha: f64,
    pub global: FailureRow,
    pub groups: Vec<FailureRow>,
}

/// Fraction of benchmarks on which every detector fails, per level of `factor`.
pub fn failure_rates(rows: &[EvalRow], factor: Factor, alpha: f64) -> Result<FailureTable> {
    alpha_index(alpha)?;
    let benches = by_benchmark(rows);
    if benches.is_empty() {
        return Err(Error::Empty("no evaluation rows".into()));
    }
    let mut groups: BTreeMap<String, (usize, [usize; 3])> = BTreeMap::new();
    let mut total = (0usize, [0usize; 3]);
    for rs in benches.values() {
        let r = rs[0];
        let g = groups.entry(factor.level(r)).or_default();
        g.0 += 1;
        total.0 += 1;
        for (i, k) in FailureKind::ALL.iter().enumerate() {
            if r.failed(*k, alpha)? {
                g.1[i] += 1;
                total.1[i] += 1;
            }
        }
    }
    let rate = |(n, f): (usize, [usize; 3])| f.map(|x| x as f64 / n as f64);
    let global_rates = rate(total);
    let global = FailureRow {
        level: "global".into(),
        benchmarks: total.0,
        rates: global_rates,
        above_global: [false; 3],
    };
    let groups = groups
        .into_iter()
        .map(|(level, c)| {
            let rates = rate(c);
            let above = [0, 1, 2].map(|i| rates[i] > global_rates[i] + 1e-12);
            FailureRow {
                level,
                benchmarks: c.0,
                rates,
                above_global: above,
            }
        })
        .collect();
    Ok(FailureTable {
        factor,
        alpha,
        global,
        groups,
    })
}

impl FailureTable {
    pub fn group(&self, level: &str) -> Option<&FailureRow> {
        self.groups.iter().find(|g| g.level == level)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            format!("Benchmark failure rate by {} (alpha = {})", self.factor, self.alpha),
            &[self.factor.as_str(), "benchmarks", "auc", "ap", "either", "above_global"],
        );
        for g in self.groups.iter().chain(std::iter::once(&self.global)) {
            let above: Vec<&str> = ["auc", "ap", "either"]
                .iter()
                .zip(g.above_global)
                .filter(|(_, a)| *a)
                .map(|(m, _)| *m)
                .collect();
            t.push(vec![
                g.level.clone(),
                g.benchmarks.to_string(),
                fmt4(g.rates[0]),
                fmt4(g.rates[1]),
                fmt4(g.rates[2]),
                above.join(" "),
            ]);
        }
        t
    }
}

/// The two transformed responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Response {
    LogitAuc,
    LogLift,
}

impl Response {
    pub const ALL: [Response; 2] = [Response::LogitAuc, Response::LogLift];

    pub fn as_str(self) -> &'static str {
        match self {
            Response::LogitAuc => "logit_auc",
            Response::LogLift => "log_lift",
        }
    }

    /// The failure flag that removes a benchmark from this response's pool.
    pub fn failure(self) -> FailureKind {
        match self {
            Response::LogitAuc => FailureKind::Auc,
            Response::LogLift => FailureKind::Ap,
        }
    }

    pub fn value(self, row: &EvalRow) -> f64 {
        match self {
            Response::LogitAuc => row.logit_auc,
            Response::LogLift => row.log_lift,
        }
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRow {
    pub detector: DetectorKind,
    pub n_auc: usize,
    pub logit_auc: f64,
    pub n_ap: usize,
    pub log_lift: f64,
    pub trivial_ratio_auc: f64,
    pub trivial_ratio_ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanTable {
    pub filter: String,
    pub alpha: f64,
    pub rows: Vec<MeanRow>,
}

/// Mean transformed metrics per detector over surviving benchmarks that pass
/// `filter`. Each response uses its own survivor pool.
pub fn mean_performance(rows: &[EvalRow], filter: &Filter, alpha: f64) -> Result<MeanTable> {
    alpha_index(alpha)?;
    #[derive(Default)]
    struct Acc {
        auc: (usize, f64),
        ap: (usize, f64),
        tr_auc: (usize, f64),
        tr_ap: (usize, f64),
    }
    let mut acc: BTreeMap<DetectorKind, Acc> = BTreeMap::new();
    for r in rows.iter().filter(|r| filter.matches(r)) {
        let a = acc.entry(r.detector).or_default();
        if !r.failed(FailureKind::Auc, alpha)? {
            a.auc.0 += 1;
            a.auc.1 += r.logit_auc;
            if let Some(t) = r.trivial_log_ratio_auc {
                a.tr_auc.0 += 1;
                a.tr_auc.1 += t;
            }
        }
        if !r.failed(FailureKind::Ap, alpha)? {
            a.ap.0 += 1;
            a.ap.1 += r.log_lift;
            if let Some(t) = r.trivial_log_ratio_ap {
                a.tr_ap.0 += 1;
                a.tr_ap.1 += t;
            }
        }
    }
    let mean = |(n, s): (usize, f64)| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(MeanTable {
        filter: filter.to_string(),
        alpha,
        rows: acc
            .into_iter()
            .map(|(detector, a)| MeanRow {
                detector,
                n_auc: a.auc.0,
                logit_auc: mean(a.auc),
                n_ap: a.ap.0,
                log_lift: mean(a.ap),
                trivial_ratio_auc: mean(a.tr_auc),
                trivial_ratio_ap: mean(a.tr_ap),
            })
            .collect(),
    })
}

impl MeanTable {
    pub fn row(&self, detector: DetectorKind) -> Option<&MeanRow> {
        self.rows.iter().find(|r| r.detector == detector)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            format!(
                "Mean performance by detector (filter: {}, alpha = {})",
                self.filter, self.alpha
            ),
            &[
                "detector",
                "n_auc",
                "mean_logit_auc",
                "n_ap",
                "mean_log_lift",
                "mean_log_auc_over_trivial",
                "mean_log_ap_over_trivial",
            ],
        );
        for r in &self.rows {
            t.push(vec![
                r.detector.as_str().to_string(),
                r.n_auc.to_string(),
                fmt4(r.logit_auc),
                r.n_ap.to_string(),
                fmt4(r.log_lift),
                fmt4(r.trivial_ratio_auc),
                fmt4(r.trivial_ratio_ap),
            ]);
        }
        t
    }
}

/// Best non-trivial result per surviving benchmark: `(first row, best value)`.
pub fn best_per_benchmark<'a>(
    rows: &'a [EvalRow],
    response: Response,
    alpha: f64,
) -> Result<Vec<(&'a EvalRow, f64)>> {
    let mut out = Vec::new();
    for rs in by_benchmark(rows).into_values() {
        if rs[0].failed(response.failure(), alpha)? {
            continue;
        }
        let best = rs
            .iter()
            .filter(|r| !r.is_trivial())
            .map(|r| response.value(r))
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            out.push((rs[0], best));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub factor: Factor,
    pub level: String,
    pub control: String,
    pub response: Response,
    pub n_level: usize,
    pub n_control: usize,
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Contrast {
    pub fn contains_zero(&self) -> bool {
        self.ci_low <= 0.0 && 0.0 <= self.ci_high
    }
}

/// Mean best-detector difference between `level` and `control` with a
/// normal-approximation 0.999 interval.
pub fn control_contrast(
    rows: &[EvalRow],
    factor: Factor,
    level: &str,
    control: &str,
    response: Response,
    alpha: f64,
) -> Result<Contrast> {
    let best = best_per_benchmark(rows, response, alpha)?;
    let pick = |l: &str| -> Vec<f64> {
        best.iter()
            .filter(|(r, _)| factor.level(r) == l)
            .map(|(_, v)| *v)
            .collect()
    };
    let (a, c) = (pick(level), pick(control));
    if c.is_empty() {
        return Err(Error::Empty(format!("control group {factor}={control}")));
    }
    for (name, g) in [(level, &a), (control, &c)] {
        if g.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "{factor}={name} has {} surviving benchmarks, need 2",
                g.len()
            )));
        }
    }
    let (ma, va) = crate::linalg::mean_var(a.iter().copied());
    let (mc, vc) = crate::linalg::mean_var(c.iter().copied());
    let diff = ma - mc;
    let se = (va / a.len() as f64 + vc / c.len() as f64).sqrt();
    Ok(Contrast {
        factor,
        level: level.to_string(),
        control: control.to_string(),
        response,
        n_level: a.len(),
        n_control: c.len(),
        difference: diff,
        ci_low: diff - Z_999 * se,
        ci_high: diff + Z_999 * se,
    })
}

/// Contrasts of every non-control level of `factor` that has at least two
/// surviving benchmarks.
pub fn contrasts(
    rows: &[EvalRow],
    factor: Factor,
    response: Response,
    alpha: f64,
) -> Result<Vec<Contrast>> {
    let control = factor
        .control()
        .ok_or_else(|| Error::InvalidParameter(format!("{factor} has no control level")))?;
    let best = best_per_benchmark(rows, response, alpha)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (r, _) in &best {
        *counts.entry(factor.level(r)).or_default() += 1;
    }
    if counts.get(&control).copied().unwrap_or(0) < 2 {
        return Ok(Vec::new());
    }
    counts
        .iter()
        .filter(|(l, &n)| **l != control && n >= 2)
        .map(|(l, _)| control_contrast(rows, factor, l, &control, response, alpha))
        .collect()
}

pub fn contrast_table(contrasts: &[Contrast], title: &str) -> Table {
    let mut t = Table::new(
        title,
        &[
            "factor",
            "level",
            "control",
            "response",
            "n_level",
            "n_control",
            "difference",
            "ci_low",
            "ci_high",
        ],
    );
    for c in contrasts {
        t.push(vec![
            c.factor.to_string(),
            c.level.clone(),
            c.control.clone(),
            c.response.to_string(),
            c.n_level.to_string(),
            c.n_control.to_string(),
            fmt4(c.difference),
            fmt4(c.ci_low),
            fmt4(c.ci_high),
        ]);
    }
    t
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A row with every verdict rejecting; tests flip what they need.
    pub(crate) fn row(bench: &str, detector: DetectorKind) -> EvalRow {
        EvalRow {
            benchmark: bench.into(),
            mset: "m".into(),
            origin: Origin::Synthetic,
            pd: PdLevel::new(1).unwrap(),
            rf: RfLevel::new(3).unwrap(),
            nc: NcLevel::new(0).unwrap(),
            fi: FiLevel::new(0).unwrap(),
            replicate: 0,
            n: 100,
            n_anom: 1,
            mean_difficulty: 0.1,
            anomaly_fraction: 0.01,
            clusteredness: None,
            distance_ratio: 1.0,
            detector,
            auc: 0.9,
            ap: 0.5,
            expected_ap: 0.05,
            logit_auc: 2.0,
            log_lift: 2.0,
            trivial_log_ratio_auc: None,
            trivial_log_ratio_ap: None,
            reject_auc_05: true,
            reject_auc_01: true,
            reject_auc_001: true,
            reject_ap_05: true,
            reject_ap_01: true,
            reject_ap_001: true,
            failed_auc_05: false,
            failed_auc_01: false,
            failed_auc_001: false,
            failed_ap_05: false,
            failed_ap_01: false,
            failed_ap_001: false,
            failed_either_05: false,
            failed_either_01: false,
            failed_either_001: false,
        }
    }

    fn set_all(r: &mut EvalRow, metric: Metric, reject: bool) {
        for a in ALPHAS {
            r.set_reject(metric, a, reject).unwrap();
        }
    }

    fn fail_bench(rows: &mut [EvalRow], kind: FailureKind) {
        for r in rows {
            for a in ALPHAS {
                r.set_failed(kind, a, true).unwrap();
            }
        }
    }

    #[test]
    fn csv_round_trip_keeps_every_column() {
        let mut r = row("b", DetectorKind::Lof);
        r.clusteredness = Some(f64::INFINITY);
        r.trivial_log_ratio_auc = Some(-0.25);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&r).unwrap();
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("reject_auc_0.001"));
        let back: EvalRow = csv::Reader::from_reader(&bytes[..])
            .deserialize()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn mark_failures_ignores_trivial_and_combines_metrics() {
        // all non-trivial fail on AP, one rejects on AUC
        let mut rows = vec![
            row("b", DetectorKind::Trivial),
            row("b", DetectorKind::Lof),
            row("b", DetectorKind::IForest),
        ];
        set_all(&mut rows[1], Metric::Ap, false);
        set_all(&mut rows[2], Metric::Ap, false);
        set_all(&mut rows[2], Metric::Auc, false);
        mark_failures(&mut rows).unwrap();
        for r in &rows {
            assert!(r.failed(FailureKind::Ap, 0.01).unwrap());
            assert!(!r.failed(FailureKind::Auc, 0.01).unwrap());
            assert!(r.failed(FailureKind::Either, 0.01).unwrap());
        }
        let mut only_trivial = vec![row("b", DetectorKind::Trivial)];
        assert!(mark_failures(&mut only_trivial).is_err());
    }

    #[test]
    fn failure_rates_global_is_weighted_mean_of_groups() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let mut r = row(&format!("b{i}"), DetectorKind::Lof);
            r.pd = PdLevel::new((i % 3) as u8 + 1).unwrap();
            if i % 4 == 0 {
                fail_bench(std::slice::from_mut(&mut r), FailureKind::Auc);
                fail_bench(std::slice::from_mut(&mut r), FailureKind::Either);
            }
            rows.push(r);
        }
        let t = failure_rates(&rows, Factor::Pd, 0.001).unwrap();
        for k in 0..3 {
            let weighted: f64 = t
                .groups
                .iter()
                .map(|g| g.rates[k] * g.benchmarks as f64)
                .sum::<f64>()
                / t.global.benchmarks as f64;
            assert!((weighted - t.global.rates[k]).abs() < 1e-12);
        }
        assert_eq!(t.global.benchmarks, 10);
        assert!((t.global.rates[0] - 0.3).abs() < 1e-12);
        assert_eq!(t.global.rates[1], 0.0);
        // pd-1 holds b0, b3, b6, b9 of which b0 fails
        let g = t.group("pd-1").unwrap();
        assert_eq!(g.benchmarks, 4);
        assert!((g.rates[0] - 0.25).abs() < 1e-12);
        assert!(!g.above_global[0]);
    }

    #[test]
    fn failure_rates_edge_cases() {
        let rows: Vec<EvalRow> = (0..4).map(|i| row(&format!("b{i}"), DetectorKind::Lof)).collect();
        let t = failure_rates(&rows, Factor::Mset, 0.05).unwrap();
        assert_eq!(t.global.rates, [0.0; 3]);
        assert_eq!(t.groups.len(), 1);
        assert_eq!(t.groups[0].rates, t.global.rates);
        assert_eq!(t.groups[0].benchmarks, t.global.benchmarks);
        assert!(failure_rates(&[], Factor::Pd, 0.05).is_err());
        assert!(failure_rates(&rows, Factor::Pd, 0.02).is_err());
    }

    #[test]
    fn mean_performance_skips_failed_benchmarks_per_metric() {
        let mut rows = vec![row("a", DetectorKind::Lof), row("b", DetectorKind::Lof)];
        rows[1].logit_auc = -4.0;
        rows[1].log_lift = 1.0;
        fail_bench(&mut rows[1..], FailureKind::Auc);
        let m = mean_performance(&rows, &Filter::default(), 0.001).unwrap();
        let r = m.row(DetectorKind::Lof).unwrap();
        assert_eq!((r.n_auc, r.n_ap), (1, 2));
        assert_eq!(r.logit_auc, 2.0);
        assert_eq!(r.log_lift, 1.5);
        assert!(r.trivial_ratio_auc.is_nan());
    }

    #[test]
    fn filters_select_subsets() {
        let mut rows: Vec<EvalRow> = (0..6).map(|i| row(&format!("b{i}"), DetectorKind::Lof)).collect();
        for (i, r) in rows.iter_mut().enumerate() {
            r.fi = FiLevel::new((i % 2 * 3) as u8).unwrap();
            r.clusteredness = Some(i as f64 * 0.1);
            r.logit_auc = i as f64;
        }
        let fi3 = Filter::parse(&["fi=fi-3"]).unwrap();
        let m = mean_performance(&rows, &fi3, 0.05).unwrap();
        assert_eq!(m.row(DetectorKind::Lof).unwrap().logit_auc, 3.0);
        let nc = Filter::parse(&["nc>0.25"]).unwrap();
        let m = mean_performance(&rows, &nc, 0.05).unwrap();
        let r = m.row(DetectorKind::Lof).unwrap();
        assert_eq!(r.n_auc, 3);
        assert_eq!(r.logit_auc, 4.0);
        let both = Filter::parse(&["fi=fi-0,fi-3", "nc<0.25"]).unwrap();
        assert_eq!(rows.iter().filter(|r| both.matches(r)).count(), 3);
        assert!(Filter::parse(&["zz=1"]).is_err());
        assert!(Filter::parse(&["fi"]).is_err());
    }

    #[test]
    fn random_scoring_means_are_near_zero() {
        use crate::ingest::Label;
        use crate::metrics::evaluate_scores;
        use rand::Rng;
        let mut rng = crate::seed::rng(5);
        let (mut s_auc, mut s_lift) = (0.0, 0.0);
        let trials = 4000;
        for t in 0..trials {
            let labels: Vec<Label> = (0..60)
                .map(|i| if i < 6 { Label::Anomaly } else { Label::Nominal })
                .collect();
            let scores: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
            let m = evaluate_scores(&scores, &labels, t, None).unwrap();
            s_auc += m.logit_auc;
            s_lift += m.log_lift;
        }
        // logit(AUC) is symmetric about zero; log lift is only approximately centred
        assert!((s_auc / trials as f64).abs() < 0.03);
        assert!((s_lift / trials as f64).abs() < 0.15);
    }

    #[test]
    fn contrast_of_identical_groups_contains_zero() {
        let mut rows = Vec::new();
        for i in 0..40 {
            let mut r = row(&format!("b{i}"), DetectorKind::Lof);
            r.fi = FiLevel::new(if i < 20 { 0 } else { 3 }).unwrap();
            r.logit_auc = (i % 20) as f64 * 0.1;
            rows.push(r);
        }
        let c = control_contrast(&rows, Factor::Fi, "fi-3", "fi-0", Response::LogitAuc, 0.05).unwrap();
        assert!(c.difference.abs() < 1e-12);
        assert!(c.contains_zero());
        assert_eq!((c.n_level, c.n_control), (20, 20));
    }

    #[test]
    fn contrast_uses_best_non_trivial_detector() {
        let mut rows = Vec::new();
        for i in 0..6 {
            let fi = if i < 3 { 0 } else { 3 };
            for (d, v) in [
                (DetectorKind::Trivial, 9.0),
                (DetectorKind::Lof, 1.0 + i as f64 * 0.01),
                (DetectorKind::Loda, 2.0 - fi as f64 + i as f64 * 0.01),
            ] {
                let mut r = row(&format!("b{i}"), d);
                r.fi = FiLevel::new(fi).unwrap();
                r.logit_auc = v;
                rows.push(r);
            }
        }
        let c = control_contrast(&rows, Factor::Fi, "fi-3", "fi-0", Response::LogitAuc, 0.05).unwrap();
        // fi-0 best is loda near 2, fi-3 best is lof near 1
        assert!((c.difference - (1.04 - 2.01)).abs() < 1e-12);
        assert!(c.ci_high < 0.0);
    }

    #[test]
    fn contrast_errors_on_small_or_empty_groups() {
        let mut rows: Vec<EvalRow> = (0..3).map(|i| row(&format!("b{i}"), DetectorKind::Lof)).collect();
        rows[0].fi = FiLevel::new(3).unwrap();
        assert!(matches!(
            control_contrast(&rows, Factor::Fi, "fi-0", "fi-2", Response::LogitAuc, 0.05),
            Err(Error::Empty(_))
        ));
        assert!(control_contrast(&rows, Factor::Fi, "fi-3", "fi-0", Response::LogitAuc, 0.05).is_err());
        assert!(contrasts(&rows, Factor::Mset, Response::LogitAuc, 0.05).is_err());
    }
}
