use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::{fmt4, EvalRow, FailureKind, Response, Table};
use crate::linalg::logit;
use crate::{Error, Result};

/// Clip applied to rf and pd before the logit.
pub const PROPORTION_CLIP: f64 = 1e-6;
/// Bound on |nc| in the real design; infinite log-variance ratios arise when
/// one class has coincident points.
pub const NC_CLIP: f64 = 10.0;

/// Column residual norms below this fraction of the original norm mark the
/// column as aliased.
const ALIAS_TOL: f64 = 1e-9;

/// Regressors of the fixed-effects model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    Rf,
    Pd,
    Cl,
    Ir,
    Mset,
    Algo,
}

impl Variable {
    pub const ALL: [Variable; 6] = [
        Variable::Rf,
        Variable::Pd,
        Variable::Cl,
        Variable::Ir,
        Variable::Mset,
        Variable::Algo,
    ];
    /// The four problem dimensions.
    pub const PROBLEM: [Variable; 4] = [Variable::Rf, Variable::Pd, Variable::Cl, Variable::Ir];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Rf => "rf",
            Variable::Pd => "pd",
            Variable::Cl => "cl",
            Variable::Ir => "ir",
            Variable::Mset => "mset",
            Variable::Algo => "algo",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Discrete levels dummy-encoded, or real-valued problem-dimension transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    Discrete,
    Real,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Discrete => "discrete",
            Design::Real => "real",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub mset: String,
    pub algo: String,
    pub rf: String,
    pub pd: String,
    pub nc: String,
    pub fi: String,
    /// logit of the clipped anomaly fraction.
    pub rf_real: f64,
    /// logit of the clipped mean difficulty.
    pub pd_real: f64,
    /// Clusteredness clipped to `[-NC_CLIP, NC_CLIP]`, 0 where undefined.
    pub cl_real: f64,
    /// log of the distance ratio floored at 1.
    pub ir_real: f64,
    pub logit_auc: f64,
    pub log_lift: f64,
    pub survives_auc: bool,
    pub survives_ap: bool,
}

/// Modeling frame: one row per non-trivial (benchmark, detector) result.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactorFrame {
    pub rows: Vec<FrameRow>,
}

impl FactorFrame {
    pub fn from_rows(rows: &[EvalRow], alpha: f64) -> Result<Self> {
        let mut out = Vec::with_capacity(rows.len());
        for r in rows.iter().filter(|r| !r.is_trivial()) {
            let clip = |p: f64| p.clamp(PROPORTION_CLIP, 1.0 - PROPORTION_CLIP);
            out.push(FrameRow {
                mset: r.mset.clone(),
                algo: r.detector.as_str().to_string(),
                rf: r.rf.to_string(),
                pd: r.pd.to_string(),
                nc: r.nc.to_string(),
                fi: r.fi.to_string(),
                rf_real: logit(clip(r.anomaly_fraction)),
                pd_real: logit(clip(r.mean_difficulty)),
                cl_real: r.clusteredness.map_or(0.0, |c| c.clamp(-NC_CLIP, NC_CLIP)),
                ir_real: r.distance_ratio.max(1.0).ln(),
                logit_auc: r.logit_auc,
                log_lift: r.log_lift,
                survives_auc: !r.failed(FailureKind::Auc, alpha)?,
                survives_ap: !r.failed(FailureKind::Ap, alpha)?,
            });
        }
        Ok(FactorFrame { rows: out })
    }

    fn pool(&self, response: Response) -> Vec<&FrameRow> {
        self.rows
            .iter()
            .filter(|r| match response {
                Response::LogitAuc => r.survives_auc,
                Response::LogLift => r.survives_ap,
            })
            .collect()
    }
}

fn level_of(v: Variable, r: &FrameRow) -> &str {
    match v {
        Variable::Rf => &r.rf,
        Variable::Pd => &r.pd,
        Variable::Cl => &r.nc,
        Variable::Ir => &r.fi,
        Variable::Mset => &r.mset,
        Variable::Algo => &r.algo,
    }
}

fn real_of(v: Variable, r: &FrameRow) -> Option<f64> {
    match v {
        Variable::Rf => Some(r.rf_real),
        Variable::Pd => Some(r.pd_real),
        Variable::Cl => Some(r.cl_real),
        Variable::Ir => Some(r.ir_real),
        Variable::Mset | Variable::Algo => None,
    }
}

/// Builds the design matrix with an intercept; discrete variables drop their
/// first sorted level.
fn design_matrix(rows: &[&FrameRow], vars: &[Variable], design: Design) -> (DMatrix<f64>, Vec<String>) {
    let mut names = vec!["(intercept)".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; rows.len()]];
    for &v in vars {
        let real = (design == Design::Real)
            .then(|| rows.first().and_then(|r| real_of(v, r)))
            .flatten();
        if real.is_some() {
            names.push(v.as_str().to_string());
            cols.push(rows.iter().map(|r| real_of(v, r).unwrap()).collect());
            continue;
        }
        let levels: BTreeSet<&str> = rows.iter().map(|r| level_of(v, r)).collect();
        for l in levels.into_iter().skip(1) {
            names.push(format!("{v}={l}"));
            cols.push(
                rows.iter()
                    .map(|r| if level_of(v, r) == l { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
    }
    let x = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cols[j][i]);
    (x, names)
}

/// Least squares through modified Gram-Schmidt QR with reorthogonalization.
/// Returns coefficients and plain R².
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<(DVector<f64>, f64)> {
    let (n, p) = x.shape();
    if n == 0 || n != y.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut r = DMatrix::<f64>::zeros(p, p);
    let mut aliased = Vec::new();
    for j in 0..p {
        let mut v = x.column(j).into_owned();
        let norm0 = v.norm();
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = qi.dot(&v);
                r[(i, j)] += c;
                v.axpy(-c, qi, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= ALIAS_TOL * norm0.max(1.0) {
            aliased.push(names.get(j).cloned().unwrap_or_else(|| format!("column {j}")));
            q.push(DVector::zeros(n));
            continue;
        }
        r[(j, j)] = norm;
        q.push(v / norm);
    }
    if !aliased.is_empty() {
        return Err(Error::RankDeficient(aliased));
    }
    let qty = DVector::from_fn(p, |i, _| q[i].dot(y));
    let mut beta = DVector::zeros(p);
    for i in (0..p).rev() {
        let mut s = qty[i];
        for k in i + 1..p {
            s -= r[(i, k)] * beta[k];
        }
        beta[i] = s / r[(i, i)];
    }
    let resid = y - x * &beta;
    let sse = resid.norm_squared();
    let mean = y.mean();
    let sst = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else if sse <= 1e-24 { 1.0 } else { 0.0 };
    Ok((beta, r2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub response: Response,
    pub design: Design,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            format!(
                "OLS coefficients for {} ({} design, n = {}, R2 = {})",
                self.response,
                self.design.as_str(),
                self.n,
                fmt4(self.r_squared)
            ),
            &["term", "coefficient"],
        );
        for (n, c) in self.names.iter().zip(&self.coefficients) {
            t.push(vec![n.clone(), format!("{c:.6}")]);
        }
        t
    }
}

/// Fits `response ~ vars` on the rows surviving for that response.
pub fn ols_fit(frame: &FactorFrame, response: Response, vars: &[Variable], design: Design) -> Result<OlsFit> {
    let rows = frame.pool(response);
    if rows.is_empty() {
        return Err(Error::Empty(format!("no surviving rows for {response}")));
    }
    let (x, names) = design_matrix(&rows, vars, design);
    let y = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|r| match response {
            Response::LogitAuc => r.logit_auc,
            Response::LogLift => r.log_lift,
        }),
    );
    let (beta, r2) = least_squares(&x, &y, &names)?;
    Ok(OlsFit {
        response,
        design,
        names,
        coefficients: beta.iter().copied().collect(),
        r_squared: r2,
        n: rows.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub model: String,
    pub r_squared: f64,
    pub loss: f64,
}

/// R² of the full model and of each model with one variable (and the
/// problem-dimension block) removed.
pub fn ablation_r2(frame: &FactorFrame, response: Response, design: Design) -> Result<Vec<AblationRow>> {
    let base = ols_fit(frame, response, &Variable::ALL, design)?.r_squared;
    let mut out = vec![AblationRow {
        model: "base".into(),
        r_squared: base,
        loss: 0.0,
    }];
    let mut variants: Vec<(String, Vec<Variable>)> = Variable::ALL
        .iter()
        .map(|&v| {
            (
                format!("without {v}"),
                Variable::ALL.iter().copied().filter(|&w| w != v).collect(),
            )
        })
        .collect();
    variants.push((
        "without problem dimensions".into(),
        vec![Variable::Mset, Variable::Algo],
    ));
    for (model, vars) in variants {
        let r2 = ols_fit(frame, response, &vars, design)?.r_squared;
        out.push(AblationRow {
            model,
            r_squared: r2,
            loss: base - r2,
        });
    }
    Ok(out)
}

pub fn ablation_table(rows: &[AblationRow], response: Response, design: Design) -> Table {
    let mut t = Table::new(
        format!("R2 loss when variables are removed: {response} ({} design)", design.as_str()),
        &["model", "r_squared", "r_squared_loss"],
    );
    for r in rows {
        t.push(vec![r.model.clone(), fmt4(r.r_squared), fmt4(r.loss)]);
    }
    t
}
