use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::knn::knn;
use crate::linalg::{logsumexp, median, percentile, sq_dist, to_rows};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkdeParams {
    /// `false` gives the plain kernel density estimate.
    pub robust: bool,
    pub max_iter: usize,
    /// L1 change in the weights that ends the reweighting.
    pub tol: f64,
    /// Overrides the median nearest-neighbor distance.
    pub bandwidth: Option<f64>,
}

impl Default for RkdeParams {
    fn default() -> Self {
        RkdeParams {
            robust: true,
            max_iter: 100,
            tol: 1e-6,
            bandwidth: None,
        }
    }
}

/// Hampel psi(r) / r with breakpoints a <= b <= c.
fn hampel_weight(r: f64, a: f64, b: f64, c: f64) -> f64 {
    if r <= a || r == 0.0 {
        1.0
    } else if r <= b {
        a / r
    } else if r <= c && c > b {
        a * (c - r) / ((c - b) * r)
    } else {
        0.0
    }
}

/// Median distance to the nearest neighbor, falling back to the mean of the
/// positive ones, then to 1.
fn nn_bandwidth(data: &DMatrix<f64>) -> f64 {
    let mut d: Vec<f64> = knn(data, 1, false).iter().map(|nb| nb[0].dist).collect();
    let med = median(&mut d);
    if med > 0.0 {
        return med;
    }
    let pos: Vec<f64> = d.into_iter().filter(|&v| v > 0.0).collect();
    if pos.is_empty() {
        1.0
    } else {
        pos.iter().sum::<f64>() / pos.len() as f64
    }
}

/// Weighted Gaussian kernel density estimate.
#[derive(Debug, Clone)]
pub struct Rkde {
    points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl Rkde {
    /// Kernel weights by iteratively reweighted KDE under the Hampel loss,
    /// with breakpoints at the 50th/75th/85th percentiles of the current
    /// feature-space residual norms.
    pub fn fit(data: &DMatrix<f64>, p: &RkdeParams) -> Result<Self> {
        let n = data.nrows();
        if n < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        let h = match p.bandwidth {
            Some(h) if h > 0.0 => h,
            Some(h) => return Err(Error::InvalidParameter(format!("rkde bandwidth {h}"))),
            None => nn_bandwidth(data),
        };
        let points = to_rows(data);
        let uniform = vec![1.0 / n as f64; n];
        if !p.robust {
            return Ok(Rkde {
                points,
                weights: uniform,
                bandwidth: h,
                converged: true,
                iterations: 0,
            });
        }
        let scale = -0.5 / (h * h);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let v = (scale * sq_dist(&points[i], &points[j])).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let mut w = nalgebra::DVector::from_vec(uniform.clone());
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..p.max_iter {
            iterations = it + 1;
            let kw = &k * &w;
            let wkw = w.dot(&kw);
            let r: Vec<f64> = (0..n).map(|i| (1.0 - 2.0 * kw[i] + wkw).max(0.0).sqrt()).collect();
            let mut sorted = r.clone();
            let a = percentile(&mut sorted, 0.50);
            let b = percentile(&mut sorted, 0.75);
            let c = percentile(&mut sorted, 0.85);
            let phi: Vec<f64> = r.iter().map(|&ri| hampel_weight(ri, a, b, c)).collect();
            let total: f64 = phi.iter().sum();
            if !(total > 0.0) {
                break;
            }
            let next = nalgebra::DVector::from_iterator(n, phi.iter().map(|v| v / total));
            let change = (&next - &w).abs().sum();
            w = next;
            if change < p.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Ok(Rkde {
                points,
                weights: uniform,
                bandwidth: h,
                converged: false,
                iterations,
            });
        }
        Ok(Rkde {
            points,
            weights: w.iter().copied().collect(),
            bandwidth: h,
            converged: true,
            iterations,
        })
    }

    /// Log density at each row of `x`.
    pub fn log_density(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let d = x.ncols() as f64;
        let h = self.bandwidth;
        let log_norm = -0.5 * d * (2.0 * PI * h * h).ln();
        let scale = -0.5 / (h * h);
        let mut terms = Vec::with_capacity(self.points.len());
        to_rows(x)
            .iter()
            .map(|y| {
                terms.clear();
                for (pt, &w) in self.points.iter().zip(&self.weights) {
                    if w > 0.0 {
                        terms.push(w.ln() + scale * sq_dist(y, pt));
                    }
                }
                log_norm + logsumexp(&terms)
            })
            .collect()
    }
}

/// Negative log of the robust density at each point, and whether the robust
/// fit fell back to plain KDE.
pub fn rkde_score(data: &DMatrix<f64>, p: &RkdeParams) -> Result<(Vec<f64>, bool)> {
    if data.nrows() < 10 {
        return Err(Error::TooFewPoints {
            needed: 10,
            got: data.nrows(),
        });
    }
    let model = Rkde::fit(data, p)?;
    let scores = model.log_density(data).into_iter().map(|v| -v).collect();
    Ok((scores, !model.converged))
}
