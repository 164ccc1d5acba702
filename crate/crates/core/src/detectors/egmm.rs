use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::linalg::logsumexp;
use crate::seed::{derive_seed, rng, Rng};
use crate::{Error, Result};

/// Ridge added to every covariance diagonal.
const COV_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgmmParams {
    pub max_components: usize,
    pub replicates: usize,
    /// A component count is kept when its mean out-of-bag log-likelihood is
    /// at least `best - (1 - keep) * |best|`.
    pub keep: f64,
    /// Fraction of variance retained by the PCA step.
    pub variance: f64,
    pub max_iter: usize,
    /// EM stops when the mean log-likelihood changes by less than this.
    pub tol: f64,
}

impl Default for EgmmParams {
    fn default() -> Self {
        EgmmParams {
            max_components: 6,
            replicates: 15,
            keep: 0.85,
            variance: 0.95,
            max_iter: 100,
            tol: 1e-3,
        }
    }
}

/// Projects centered data onto the leading principal components that
/// explain `variance` of the total.
fn pca(data: &DMatrix<f64>, variance: f64) -> DMatrix<f64> {
    let n = data.nrows();
    let mean = data.row_mean();
    let mut xc = data.clone();
    for mut r in xc.row_iter_mut() {
        r -= &mean;
    }
    let cov = xc.transpose() * &xc / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut keep = Vec::new();
    let mut acc = 0.0;
    for &i in &order {
        keep.push(i);
        acc += eig.eigenvalues[i].max(0.0);
        if acc >= variance * total {
            break;
        }
    }
    let basis = DMatrix::from_fn(data.ncols(), keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
    xc * basis
}

#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    /// Inverse Cholesky factor of the covariance.
    l_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: &DMatrix<f64>) -> Option<Self> {
        let p = mean.len();
        let chol = cov.clone().cholesky()?;
        let l = chol.l();
        let l_inv = l.solve_lower_triangular(&DMatrix::identity(p, p))?;
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() || weight <= 0.0 {
            return None;
        }
        Some(Component {
            log_weight: weight.ln(),
            mean,
            l_inv,
            log_norm: -0.5 * (p as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    /// `log(w) + log N(x | mean, cov)` for each row.
    fn log_density(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut y = x * self.l_inv.transpose();
        let shift = &self.l_inv * &self.mean;
        let mut sq = vec![0.0; x.nrows()];
        for (j, mut col) in y.column_iter_mut().enumerate() {
            col.add_scalar_mut(-shift[j]);
            for (s, v) in sq.iter_mut().zip(col.iter()) {
                *s += v * v;
            }
        }
        sq.into_iter()
            .map(|m| self.log_weight + self.log_norm - 0.5 * m)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Gmm {
    components: Vec<Component>,
}

impl Gmm {
    fn log_density(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let per: Vec<Vec<f64>> = self.components.iter().map(|c| c.log_density(x)).collect();
        let mut buf = vec![0.0; per.len()];
        (0..x.nrows())
            .map(|i| {
                for (b, p) in buf.iter_mut().zip(&per) {
                    *b = p[i];
                }
                logsumexp(&buf)
            })
            .collect()
    }
}

/// Weighted covariance `sum_i r_i (x_i - mean)(x_i - mean)' / total` plus
/// the ridge; unit weights when `resp` is `None`.
fn covariance(x: &DMatrix<f64>, mean: &DVector<f64>, resp: Option<&[f64]>, total: f64) -> DMatrix<f64> {
    let mut w = x.clone();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
        if let Some(resp) = resp {
            for (v, r) in col.iter_mut().zip(resp) {
                *v *= r.sqrt();
            }
        }
    }
    let mut cov = w.transpose() * &w / total;
    for k in 0..cov.nrows() {
        cov[(k, k)] += COV_RIDGE;
    }
    cov
}

/// EM from `k` distinct random points as means and the pooled covariance.
/// `None` when the fit degenerates.
fn fit_gmm(x: &DMatrix<f64>, k: usize, p: &EgmmParams, r: &mut Rng) -> Option<Gmm> {
    let n = x.nrows();
    if n < k {
        return None;
    }
    let mean0 = x.row_mean().transpose();
    let pooled = covariance(x, &mean0, None, n as f64);
    let starts = index::sample(r, n, k).into_vec();
    let mut comps: Vec<Component> = Vec::with_capacity(k);
    for &s in &starts {
        let m = x.row(s).transpose();
        if comps.iter().any(|c| c.mean == m) {
            return None;
        }
        comps.push(Component::new(1.0 / k as f64, m, &pooled)?);
    }
    let mut gmm = Gmm { components: comps };
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..p.max_iter {
        let per: Vec<Vec<f64>> = gmm.components.iter().map(|c| c.log_density(x)).collect();
        let mut resp = vec![vec![0.0; n]; k];
        let mut ll = 0.0;
        let mut buf = vec![0.0; k];
        for i in 0..n {
            for j in 0..k {
                buf[j] = per[j][i];
            }
            let lse = logsumexp(&buf);
            ll += lse;
            for j in 0..k {
                resp[j][i] = (buf[j] - lse).exp();
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return None;
        }
        if (ll - prev).abs() <= p.tol {
            return Some(gmm);
        }
        prev = ll;
        let mut next = Vec::with_capacity(k);
        for rj in &resp {
            let nk: f64 = rj.iter().sum();
            if nk < 1e-8 * n as f64 {
                return None;
            }
            let mean = x.tr_mul(&DVector::from_column_slice(rj)) / nk;
            let cov = covariance(x, &mean, Some(rj), nk);
            next.push(Component::new(nk / n as f64, mean, &cov)?);
        }
        gmm = Gmm { components: next };
    }
    Some(gmm)
}

/// Ensemble-GMM score: mean negative log density over the retained
/// bootstrap-fitted mixtures, after a PCA reduction.
pub fn egmm_score(data: &DMatrix<f64>, p: &EgmmParams, seed: u64) -> Result<Vec<f64>> {
    let n = data.nrows();
    if n < 10 {
        return Err(Error::TooFewPoints { needed: 10, got: n });
    }
    let x = pca(data, p.variance);
    if x.ncols() == 0 || x.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let mut by_k: Vec<(usize, f64, Vec<Gmm>)> = Vec::new();
    for k in 1..=p.max_components {
        let mut models = Vec::new();
        let mut oob_ll = Vec::new();
        for rep in 0..p.replicates {
            let mut r = rng(derive_seed(seed, &["egmm", &k.to_string(), &rep.to_string()]));
            let boot: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            boot.iter().for_each(|&i| in_bag[i] = true);
            let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
            let xb = x.select_rows(&boot);
            let Some(g) = fit_gmm(&xb, k, p, &mut r) else {
                continue;
            };
            let held = if oob.is_empty() { xb } else { x.select_rows(&oob) };
            let ll = g.log_density(&held);
            oob_ll.push(ll.iter().sum::<f64>() / ll.len() as f64);
            models.push(g);
        }
        if !models.is_empty() {
            let avg = oob_ll.iter().sum::<f64>() / oob_ll.len() as f64;
            if avg.is_finite() {
                by_k.push((k, avg, models));
            }
        }
    }
    let best = by_k
        .iter()
        .map(|t| t.1)
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(Error::Convergence("egmm: every mixture fit failed".into()));
    }
    let cut = best - (1.0 - p.keep) * best.abs();
    let kept: Vec<&Gmm> = by_k
        .iter()
        .filter(|t| t.1 >= cut)
        .flat_map(|t| t.2.iter())
        .collect();
    let mut scores = vec![0.0; n];
    for g in &kept {
        for (s, ld) in scores.iter_mut().zip(g.log_density(&x)) {
            *s -= ld;
        }
    }
    let l = kept.len() as f64;
    Ok(scores.into_iter().map(|s| s / l).collect())
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            let mut r = vec![0.0; v.len()];
            for (k, &i) in idx.iter().enumerate() {
                r[i] = k as f64;
            }
            r
        }
        let (ra, rb) = (ranks(a), ranks(b));
        let m = (a.len() - 1) as f64 / 2.0;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
        let var: f64 = ra.iter().map(|x| (x - m) * (x - m)).sum();
        cov / var
    }

    fn fast() -> EgmmParams {
        EgmmParams {
            replicates: 5,
            ..Default::default()
        }
    }

    #[test]
    fn single_gaussian_tracks_mahalanobis() {
        // rotated Gaussian with variances 3, 2, 1 so PCA keeps every axis
        let z = gaussian(400, 3, 11);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let a = rot * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3f64.sqrt(), 2f64.sqrt(), 1.0]));
        let x = &z * a.transpose();
        let cov = &a * a.transpose();
        let inv = cov.try_inverse().unwrap();
        let maha: Vec<f64> = z
            .row_iter()
            .map(|r| {
                let v = (&a * r.transpose()).transpose();
                (&v * &inv * v.transpose())[(0, 0)]
            })
            .collect();
        assert_eq!(pca(&x, 0.95).ncols(), 3);
        let s = egmm_score(&x, &fast(), 3).unwrap();
        assert!(spearman(&s, &maha) > 0.95, "{}", spearman(&s, &maha));
    }

    #[test]
    fn gap_between_clusters_scores_high() {
        let a = gaussian(150, 2, 1);
        let b = gaussian(150, 2, 2);
        let mut x = DMatrix::zeros(301, 2);
        for i in 0..150 {
            x[(i, 0)] = a[(i, 0)] * 0.5 - 5.0;
            x[(i, 1)] = a[(i, 1)] * 0.5;
            x[(150 + i, 0)] = b[(i, 0)] * 0.5 + 5.0;
            x[(150 + i, 1)] = b[(i, 1)] * 0.5;
        }
        // x[300] stays at the midpoint
        let s = egmm_score(&x, &fast(), 4).unwrap();
        let core = s[..300].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(s[300] > core, "{} vs {}", s[300], core);
    }

    #[test]
    fn pca_keeps_enough_variance() {
        let mut x = gaussian(200, 4, 5);
        x.column_mut(0).scale_mut(10.0);
        assert!(pca(&x, 0.95).ncols() < 4);
        assert_eq!(pca(&x, 1.0).ncols(), 4);
    }

    #[test]
    fn too_few_points() {
        assert!(egmm_score(&gaussian(9, 2, 0), &fast(), 0).is_err());
    }
}
