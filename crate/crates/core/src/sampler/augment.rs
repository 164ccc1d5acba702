use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng as _;

use super::Benchmark;
use crate::ingest::Motherset;
use crate::seed::rng;
use crate::{Error, Result};

/// Mean pairwise Euclidean distance over a fixed subsample of rows, kept as
/// per-pair squared distances so columns can be added and removed cheaply.
#[derive(Debug, Clone)]
pub struct DistanceEstimator {
    rows: Vec<usize>,
    sq: Vec<f64>,
}

impl DistanceEstimator {
    /// Uses every row when `n <= max_points`, otherwise a seeded subsample.
    pub fn new(features: &DMatrix<f64>, max_points: usize, seed: u64) -> Self {
        let n = features.nrows();
        let rows: Vec<usize> = if n > max_points {
            let mut v = index::sample(&mut rng(seed), n, max_points).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        let m = rows.len();
        let mut est = DistanceEstimator {
            rows,
            sq: vec![0.0; m * m.saturating_sub(1) / 2],
        };
        for c in 0..features.ncols() {
            let col: Vec<f64> = features.column(c).iter().copied().collect();
            est.add_column(&col);
        }
        est
    }

    fn update(&mut self, col: &[f64], sign: f64) {
        let vals: Vec<f64> = self.rows.iter().map(|&i| col[i]).collect();
        let mut k = 0;
        for a in 0..vals.len() {
            for b in (a + 1)..vals.len() {
                let diff = vals[a] - vals[b];
                self.sq[k] += sign * diff * diff;
                k += 1;
            }
        }
    }

    /// `col` holds one value per benchmark row.
    pub fn add_column(&mut self, col: &[f64]) {
        self.update(col, 1.0);
    }

    pub fn remove_column(&mut self, col: &[f64]) {
        self.update(col, -1.0);
    }

    pub fn mean(&self) -> f64 {
        if self.sq.is_empty() {
            return 0.0;
        }
        self.sq.iter().map(|&s| s.max(0.0).sqrt()).sum::<f64>() / self.sq.len() as f64
    }
}

/// Dimension at which random-coordinate distances grow by `alpha`.
pub fn estimated_dimension(d: usize, alpha: f64) -> usize {
    (alpha * alpha * d as f64).round() as usize
}

/// Appends bootstrap copies of random motherset features until the mean
/// pairwise distance has grown by the ratio closest to `alpha`.
pub fn augment_irrelevant(
    bench: &Benchmark,
    alpha: f64,
    mset: &Motherset,
    seed: u64,
    distance_points: usize,
) -> Result<Benchmark> {
    if !(alpha >= 1.0) {
        return Err(Error::InvalidParameter(format!("distance ratio {alpha} is below 1")));
    }
    if alpha == 1.0 {
        return Ok(bench.clone());
    }
    let mut r = rng(seed);
    let n = bench.n();
    let mut new_column = |sources: &mut Vec<usize>| -> Vec<f64> {
        let j = r.random_range(0..mset.d());
        sources.push(j);
        (0..n).map(|_| mset.features[(r.random_range(0..mset.n()), j)]).collect()
    };

    let mut est = DistanceEstimator::new(&bench.features, distance_points, seed);
    let base = est.mean();
    if base <= 0.0 {
        return Err(Error::Infeasible(format!(
            "{}: all points coincide, distance ratio undefined",
            bench.spec.id()
        )));
    }
    let mut sources = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for _ in bench.d()..estimated_dimension(bench.d(), alpha) {
        let col = new_column(&mut sources);
        est.add_column(&col);
        cols.push(col);
    }
    let mut ratio = est.mean() / base;
    if ratio < alpha {
        loop {
            let col = new_column(&mut sources);
            est.add_column(&col);
            let next = est.mean() / base;
            if (next - alpha).abs() < (ratio - alpha).abs() {
                ratio = next;
                cols.push(col);
            } else {
                est.remove_column(&col);
                sources.pop();
                break;
            }
        }
    } else {
        while let Some(col) = cols.pop() {
            est.remove_column(&col);
            let next = est.mean() / base;
            if (next - alpha).abs() < (ratio - alpha).abs() {
                ratio = next;
                sources.pop();
            } else {
                est.add_column(&col);
                cols.push(col);
                break;
            }
        }
    }

    let d0 = bench.d();
    let features = DMatrix::from_fn(n, d0 + cols.len(), |i, c| {
        if c < d0 {
            bench.features[(i, c)]
        } else {
            cols[c - d0][i]
        }
    });
    let mut out = bench.clone();
    out.features = features;
    out.irrelevant_sources.extend(sources);
    out.measured.distance_ratio = ratio;
    Ok(out)
}
