//! Point-difficulty oracle: Gaussian-RBF kernel logistic regression.
//!
//! The model is `f(x) = sum_j alpha_j k(x, c_j) + b` with penalty
//! `lambda/2 * alpha' K alpha` on the mean logistic loss. It is fit in the
//! equivalent whitened basis `Z = K_nc U S^{-1/2}` (from the eigen-
//! decomposition `K_cc = U S U'`), where the penalty becomes a plain ridge
//! `lambda/2 * |w|^2` and Newton/IRLS steps are well conditioned. Kernel
//! directions with negligible eigenvalues are dropped.
//!
//! A point's difficulty is the fitted posterior of the class opposite to its
//! ground truth.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::ingest::{Label, Motherset};
use crate::linalg::{dist, median, sigmoid, to_rows};
use crate::seed::{derive_seed, rng};
use crate::{Error, Result};

/// Posterior probabilities are clipped into `[PROB_CLIP, 1 - PROB_CLIP]`.
pub const PROB_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlrConfig {
    /// Bandwidths are these multiples of the median pairwise distance.
    pub bandwidth_multipliers: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub folds: usize,
    pub max_iter: usize,
    /// Relative objective change that ends IRLS.
    pub tol: f64,
    pub max_halvings: usize,
    /// Above this many points the kernel centers are subsampled.
    pub large_n: usize,
    pub max_centers: usize,
    /// Cross-validation runs on a stratified subsample of at most this many
    /// points; the final model is fit on the full motherset.
    pub cv_max_points: usize,
}

impl Default for KlrConfig {
    fn default() -> Self {
        KlrConfig {
            bandwidth_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            lambdas: vec![1e-4, 1e-3, 1e-2, 1e-1],
            folds: 5,
            max_iter: 100,
            tol: 1e-8,
            max_halvings: 20,
            large_n: 5000,
            max_centers: 1000,
            cv_max_points: 1000,
        }
    }
}

/// A fitted kernel logistic regression model of `P(anomaly | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyOracle {
    /// M x d kernel centers.
    pub centers: DMatrix<f64>,
    /// Dual coefficients, one per center.
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub bandwidth: f64,
    pub regularization: f64,
}

impl DifficultyOracle {
    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Clipped `P(anomaly | x)` for each row of `x`.
    pub fn posterior_anomaly(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let k = rbf_kernel(x, &self.centers, self.bandwidth);
        let f = k * &self.weights;
        Ok(f.iter()
            .map(|&fi| sigmoid(fi + self.intercept).clamp(PROB_CLIP, 1.0 - PROB_CLIP))
            .collect())
    }
}

/// Difficulty of one point: the oracle's probability of the other class.
pub fn score_difficulty(oracle: &DifficultyOracle, point: &[f64], true_label: Label) -> Result<f64> {
    let x = DMatrix::from_row_slice(1, point.len(), point);
    let p = oracle.posterior_anomaly(&x)?[0];
    Ok(difficulty_from_posterior(p, true_label))
}

fn difficulty_from_posterior(p_anomaly: f64, label: Label) -> f64 {
    match label {
        Label::Anomaly => 1.0 - p_anomaly,
        Label::Nominal => p_anomaly,
    }
}

/// Difficulty of every motherset point.
pub fn difficulty_table(oracle: &DifficultyOracle, mset: &Motherset) -> Result<Vec<f64>> {
    Ok(oracle
        .posterior_anomaly(&mset.features)?
        .into_iter()
        .zip(&mset.labels)
        .map(|(p, &l)| difficulty_from_posterior(p, l))
        .collect())
}

/// Gaussian RBF kernel matrix `exp(-|a_i - b_j|^2 / (2 h^2))`.
pub fn rbf_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let an: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).norm_squared()).collect();
    let bn: Vec<f64> = (0..b.nrows()).map(|j| b.row(j).norm_squared()).collect();
    let mut k = a * b.transpose();
    let scale = -0.5 / (bandwidth * bandwidth);
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            let sq = (an[i] + bn[j] - 2.0 * k[(i, j)]).max(0.0);
            k[(i, j)] = (scale * sq).exp();
        }
    }
    k
}

/// Projection `U_r S_r^{-1/2}` that whitens the center kernel matrix.
fn whitening(k_cc: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(k_cc);
    let smax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-10 * smax)
        .collect();
    DMatrix::from_fn(eig.eigenvectors.nrows(), keep.len(), |i, k| {
        eig.eigenvectors[(i, keep[k])] / eig.eigenvalues[keep[k]].sqrt()
    })
}

#[derive(Debug, Clone)]
struct NewtonFit {
    w: DVector<f64>,
    b: f64,
    converged: bool,
    /// Penalized objective (mean loss + ridge) after each accepted step.
    trace: Vec<f64>,
}

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn objective(z: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, lambda: f64) -> (f64, DVector<f64>) {
    let f = z * w;
    let n = y.len() as f64;
    let f = f.map(|v| v + b);
    let loss: f64 = f.iter().zip(y).map(|(&fi, &yi)| log1pexp(fi) - yi * fi).sum::<f64>() / n;
    (loss + 0.5 * lambda * w.norm_squared(), f)
}

/// Regularized logistic regression on features `z` by Newton-IRLS with
/// step halving; the objective never increases across accepted steps.
fn newton(
    z: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    warm: Option<(&DVector<f64>, f64)>,
    cfg: &KlrConfig,
) -> NewtonFit {
    let n = z.nrows();
    let r = z.ncols();
    let nf = n as f64;
    let (mut w, mut b) = match warm {
        Some((w, b)) => (w.clone(), b),
        None => {
            let prior = (y.iter().sum::<f64>() / nf).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            (DVector::zeros(r), crate::linalg::logit(prior))
        }
    };
    let (mut obj, mut f) = objective(z, y, &w, b, lambda);
    let mut trace = vec![obj];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_iterator(n, p.iter().zip(y).map(|(pi, yi)| pi - yi));
        let wts: Vec<f64> = p.iter().map(|pi| (pi * (1.0 - pi)).max(1e-12)).collect();

        // gradient
        let gw = z.tr_mul(&resid) / nf + &w * lambda;
        let gb = resid.sum() / nf;

        // Hessian blocks
        let mut zs = z.clone();
        for i in 0..n {
            let s = wts[i].sqrt();
            zs.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let mut h = DMatrix::zeros(r + 1, r + 1);
        let zz = zs.transpose() * &zs / nf;
        h.view_mut((0, 0), (r, r)).copy_from(&zz);
        for k in 0..r {
            h[(k, k)] += lambda;
        }
        let zw1 = DVector::from_iterator(
            r,
            (0..r).map(|k| (0..n).map(|i| z[(i, k)] * wts[i]).sum::<f64>() / nf),
        );
        for k in 0..r {
            h[(k, r)] = zw1[k];
            h[(r, k)] = zw1[k];
        }
        h[(r, r)] = wts.iter().sum::<f64>() / nf + 1e-12;
        let mut g = DVector::zeros(r + 1);
        g.rows_mut(0, r).copy_from(&gw);
        g[r] = gb;

        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => match h.lu().solve(&g) {
                Some(s) => s,
                None => break,
            },
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let w_new = &w - step.rows(0, r) * t;
            let b_new = b - step[r] * t;
            let (obj_new, f_new) = objective(z, y, &w_new, b_new, lambda);
            if obj_new <= obj {
                let rel = (obj - obj_new) / obj.abs().max(1e-12);
                w = w_new;
                b = b_new;
                obj = obj_new;
                f = f_new;
                trace.push(obj);
                accepted = true;
                if rel < cfg.tol {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent direction left: at the optimum to working precision
            converged = gw.norm() + gb.abs() < 1e-6;
            break;
        }
        if converged {
            break;
        }
    }
    NewtonFit {
        w,
        b,
        converged,
        trace,
    }
}

/// Outcome of one (bandwidth, regularization) grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub multiplier: f64,
    pub bandwidth: f64,
    pub lambda: f64,
    /// Mean held-out log-loss over the folds.
    pub cv_log_loss: f64,
    /// IRLS converged on every fold.
    pub converged: bool,
}

/// A fitted oracle with its model-selection record.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub oracle: DifficultyOracle,
    pub grid: Vec<GridPoint>,
    pub selected: usize,
    pub median_distance: f64,
    pub cv_points: usize,
    pub objective_trace: Vec<f64>,
}

fn log_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Median pairwise distance over (a subsample of at most 1000) rows.
fn median_pairwise_distance(rows: &[Vec<f64>], seed: u64) -> f64 {
    let n = rows.len();
    let idx: Vec<usize> = if n > 1000 {
        let mut v = index::sample(&mut rng(seed), n, 1000).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
    for a in 0..idx.len() {
        for b in (a + 1)..idx.len() {
            d.push(dist(&rows[idx[a]], &rows[idx[b]]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let med = median(&mut d);
    if med > 0.0 {
        return med;
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// Stratified subsample (at most `cap` points) and fold assignment.
fn stratified_folds(y: &[f64], cap: usize, folds: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng(seed);
    let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.5).collect();
    let mut neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] <= 0.5).collect();
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);
    if y.len() > cap {
        let keep_pos = ((pos.len() as f64 / y.len() as f64) * cap as f64).round() as usize;
        let keep_pos = keep_pos.clamp(folds.min(pos.len()), pos.len());
        pos.truncate(keep_pos);
        neg.truncate(cap - keep_pos);
    }
    let mut points = Vec::new();
    let mut fold = Vec::new();
    for class in [&pos, &neg] {
        for (k, &i) in class.iter().enumerate() {
            points.push(i);
            fold.push(k % folds);
        }
    }
    (points, fold)
}

/// Selects bandwidth and regularization by k-fold cross-validated log-loss
/// and fits the final oracle on the whole motherset.
pub fn fit_difficulty_oracle(mset: &Motherset, seed: u64, cfg: &KlrConfig) -> Result<OracleFit> {
    let n = mset.n();
    let y: Vec<f64> = mset
        .labels
        .iter()
        .map(|l| if l.is_anomaly() { 1.0 } else { 0.0 })
        .collect();
    let n_pos = y.iter().filter(|&&v| v > 0.5).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let rows = to_rows(&mset.features);
    let med = median_pairwise_distance(&rows, derive_seed(seed, &["median-distance"]));

    // cross-validation on a stratified subsample
    let (cv_idx, fold_of) = stratified_folds(&y, cfg.cv_max_points, cfg.folds, derive_seed(seed, &["folds"]));
    let x_cv = select_rows(&mset.features, &cv_idx);
    let y_cv: Vec<f64> = cv_idx.iter().map(|&i| y[i]).collect();
    let mut lambdas = cfg.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let mut grid = Vec::new();
    for &mult in &cfg.bandwidth_multipliers {
        let h = mult * med;
        let mut loss = vec![0.0; lambdas.len()];
        let mut conv = vec![true; lambdas.len()];
        for f in 0..cfg.folds {
            let tr: Vec<usize> = (0..cv_idx.len()).filter(|&i| fold_of[i] != f).collect();
            let te: Vec<usize> = (0..cv_idx.len()).filter(|&i| fold_of[i] == f).collect();
            if te.is_empty() || tr.is_empty() {
                continue;
            }
            let x_tr = select_rows(&x_cv, &tr);
            let x_te = select_rows(&x_cv, &te);
            let y_tr: Vec<f64> = tr.iter().map(|&i| y_cv[i]).collect();
            let proj = whitening(rbf_kernel(&x_tr, &x_tr, h));
            let z_tr = rbf_kernel(&x_tr, &x_tr, h) * &proj;
            let z_te = rbf_kernel(&x_te, &x_tr, h) * &proj;
            let mut warm: Option<(DVector<f64>, f64)> = None;
            for (li, &lambda) in lambdas.iter().enumerate() {
                let fit = newton(&z_tr, &y_tr, lambda, warm.as_ref().map(|(w, b)| (w, *b)), cfg);
                conv[li] &= fit.converged;
                let f_te = &z_te * &fit.w;
                let fold_loss: f64 = te
                    .iter()
                    .zip(f_te.iter())
                    .map(|(&i, &fi)| log_loss(sigmoid(fi + fit.b), y_cv[i]))
                    .sum::<f64>()
                    / te.len() as f64;
                loss[li] += fold_loss / cfg.folds as f64;
                warm = Some((fit.w, fit.b));
            }
        }
        for (li, &lambda) in lambdas.iter().enumerate() {
            grid.push(GridPoint {
                multiplier: mult,
                bandwidth: h,
                lambda,
                cv_log_loss: loss[li],
                converged: conv[li],
            });
        }
    }

    // final fit, falling back through the ranking on non-convergence
    let centers_idx: Vec<usize> = if n > cfg.large_n {
        let mut v = index::sample(&mut rng(derive_seed(seed, &["centers"])), n, cfg.max_centers).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let centers = select_rows(&mset.features, &centers_idx);
    let mut ranking: Vec<usize> = (0..grid.len()).filter(|&i| grid[i].converged).collect();
    ranking.sort_by(|&a, &b| grid[a].cv_log_loss.total_cmp(&grid[b].cv_log_loss).then(a.cmp(&b)));
    for &gi in &ranking {
        let g = &grid[gi];
        let proj = whitening(rbf_kernel(&centers, &centers, g.bandwidth));
        let z = rbf_kernel(&mset.features, &centers, g.bandwidth) * &proj;
        let fit = newton(&z, &y, g.lambda, None, cfg);
        if !fit.converged {
            log::warn!(
                "{}: IRLS did not converge at bandwidth {} lambda {}; trying next grid point",
                mset.name,
                g.bandwidth,
                g.lambda
            );
            continue;
        }
        let weights = &proj * &fit.w;
        return Ok(OracleFit {
            oracle: DifficultyOracle {
                centers,
                weights,
                intercept: fit.b,
                bandwidth: g.bandwidth,
                regularization: g.lambda,
            },
            grid,
            selected: gi,
            median_distance: med,
            cv_points: cv_idx.len(),
            objective_trace: fit.trace,
        });
    }
    Err(Error::Convergence(format!(
        "kernel logistic regression did not converge at any grid point for {}",
        mset.name
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Origin;
    use rand_distr::{Distribution, Normal};

    fn mset_1d(values: &[f64], labels: Vec<Label>) -> Motherset {
        Motherset {
            name: "fixture".into(),
            feature_names: vec!["x".into()],
            features: DMatrix::from_column_slice(values.len(), 1, values),
            labels,
            origin: Origin::Binary,
            dropped_columns: vec![],
            anomaly_source: vec![],
            seed: None,
        }
    }

    fn two_points_sets(seed: u64, per: usize) -> Motherset {
        let mut r = rng(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut v = Vec::new();
        let mut l = Vec::new();
        for _ in 0..per {
            v.push(-10.0 + noise.sample(&mut r));
            l.push(Label::Nominal);
            v.push(10.0 + noise.sample(&mut r));
            l.push(Label::Anomaly);
        }
        mset_1d(&v, l)
    }

    fn small_cfg() -> KlrConfig {
        KlrConfig {
            bandwidth_multipliers: vec![0.5, 1.0],
            lambdas: vec![1e-3, 1e-2],
            ..Default::default()
        }
    }

    #[test]
    fn separated_classes() {
        let m = two_points_sets(1, 200);
        let fit = fit_difficulty_oracle(&m, 3, &small_cfg()).unwrap();
        let test = two_points_sets(99, 100);
        let p = fit.oracle.posterior_anomaly(&test.features).unwrap();
        let acc = p
            .iter()
            .zip(&test.labels)
            .filter(|(&p, l)| (p > 0.5) == l.is_anomaly())
            .count() as f64
            / p.len() as f64;
        assert!(acc > 0.99, "accuracy {acc}");
        // deep inside the anomaly region
        let s = score_difficulty(&fit.oracle, &[10.0], Label::Anomaly).unwrap();
        assert!(s < 0.05, "{s}");
        // midpoint of the symmetric classes
        let s = score_difficulty(&fit.oracle, &[0.0], Label::Anomaly).unwrap();
        assert!((s - 0.5).abs() < 0.05, "{s}");
    }

    #[test]
    fn no_signal_gives_prior() {
        let labels: Vec<Label> = (0..60)
            .map(|i| if i % 3 == 0 { Label::Anomaly } else { Label::Nominal })
            .collect();
        let m = mset_1d(&[0.0; 60], labels);
        let fit = fit_difficulty_oracle(&m, 0, &small_cfg()).unwrap();
        for p in fit.oracle.posterior_anomaly(&m.features).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-3, "{p}");
        }
    }

    #[test]
    fn deterministic_selection() {
        let m = two_points_sets(4, 60);
        let a = fit_difficulty_oracle(&m, 8, &small_cfg()).unwrap();
        let b = fit_difficulty_oracle(&m, 8, &small_cfg()).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.oracle, b.oracle);
    }

    #[test]
    fn selected_point_minimizes_cv_loss() {
        let m = two_points_sets(5, 80);
        let fit = fit_difficulty_oracle(&m, 1, &KlrConfig::default()).unwrap();
        let best = fit.grid[fit.selected].cv_log_loss;
        for g in fit.grid.iter().filter(|g| g.converged) {
            assert!(best <= g.cv_log_loss);
        }
    }

    #[test]
    fn irls_objective_is_monotone() {
        // overlapping classes make the fit take several steps
        let mut r = rng(2);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut v = Vec::new();
        let mut l = Vec::new();
        for i in 0..150 {
            let anomaly = i % 3 == 0;
            v.push(noise.sample(&mut r) + if anomaly { 1.0 } else { 0.0 });
            l.push(if anomaly { Label::Anomaly } else { Label::Nominal });
        }
        let m = mset_1d(&v, l);
        let fit = fit_difficulty_oracle(&m, 0, &small_cfg()).unwrap();
        assert!(fit.objective_trace.len() > 2);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn complement_and_dimension_errors() {
        let m = two_points_sets(6, 40);
        let fit = fit_difficulty_oracle(&m, 0, &small_cfg()).unwrap();
        for x in [-10.0, -1.0, 0.3, 4.0] {
            let a = score_difficulty(&fit.oracle, &[x], Label::Anomaly).unwrap();
            let b = score_difficulty(&fit.oracle, &[x], Label::Nominal).unwrap();
            assert_eq!(a + b, 1.0);
            assert!((0.0..1.0).contains(&a));
        }
        assert!(matches!(
            score_difficulty(&fit.oracle, &[1.0, 2.0], Label::Anomaly),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
