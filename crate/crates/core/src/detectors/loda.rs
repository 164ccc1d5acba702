use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::seed::{derive_seed, rng};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Projection {
    features: Vec<usize>,
    weights: Vec<f64>,
    lo: f64,
    width: f64,
    /// Bin probabilities.
    prob: Vec<f64>,
}

impl Projection {
    fn project(&self, data: &DMatrix<f64>, i: usize) -> f64 {
        self.features.iter().zip(&self.weights).map(|(&f, w)| w * data[(i, f)]).sum()
    }
}

/// Sparse random projections with one equal-width histogram each.
#[derive(Debug, Clone)]
pub struct Loda {
    projections: Vec<Projection>,
    /// Probability assigned outside the fitted support.
    floor: f64,
}

impl Loda {
    /// `projections` projections over `ceil(sqrt d)` random coordinates with
    /// standard-normal weights; `ceil(sqrt n)` bins per histogram.
    pub fn fit(data: &DMatrix<f64>, projections: usize, seed: u64) -> Result<Self> {
        let (n, d) = data.shape();
        if n < 2 || d == 0 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        let m = (d as f64).sqrt().ceil() as usize;
        let bins = (n as f64).sqrt().ceil() as usize;
        let floor = 1.0 / (n * bins) as f64;
        let projections = (0..projections)
            .map(|p| {
                let mut r = rng(derive_seed(seed, &["projection", &p.to_string()]));
                let mut features = index::sample(&mut r, d, m).into_vec();
                features.sort_unstable();
                let weights: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
                let mut proj = Projection {
                    features,
                    weights,
                    lo: 0.0,
                    width: 1.0,
                    prob: vec![0.0; bins],
                };
                let z: Vec<f64> = (0..n).map(|i| proj.project(data, i)).collect();
                let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                proj.lo = lo;
                proj.width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
                for v in z {
                    let b = (((v - lo) / proj.width) as usize).min(bins - 1);
                    proj.prob[b] += 1.0 / n as f64;
                }
                proj
            })
            .collect();
        Ok(Loda { projections, floor })
    }

    /// Mean negative log density over projections.
    pub fn score(&self, data: &DMatrix<f64>) -> Vec<f64> {
        (0..data.nrows())
            .map(|i| {
                self.projections
                    .iter()
                    .map(|p| {
                        let t = (p.project(data, i) - p.lo) / p.width;
                        let bins = p.prob.len();
                        let prob = if t < 0.0 || t > bins as f64 {
                            self.floor
                        } else {
                            p.prob[(t as usize).min(bins - 1)].max(self.floor)
                        };
                        -(prob / p.width).ln()
                    })
                    .sum::<f64>()
                    / self.projections.len() as f64
            })
            .collect()
    }
}

pub fn loda_score(data: &DMatrix<f64>, projections: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(Loda::fit(data, projections, seed)?.score(data))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn projection_shape() {
        let x = gaussian(50, 9, 1);
        let l = Loda::fit(&x, 27, 2).unwrap();
        assert_eq!(l.projections.len(), 27);
        assert!(l.projections.iter().all(|p| p.features.len() == 3 && p.prob.len() == 8));
        for p in &l.projections {
            assert!((p.prob.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_support_is_maximal() {
        let x = gaussian(60, 4, 3);
        let l = Loda::fit(&x, 12, 4).unwrap();
        let inside = l.score(&x);
        let far = l.score(&DMatrix::from_element(1, 4, 1e3))[0];
        assert!(inside.iter().all(|&s| s <= far));
        // the floor alone determines the far score
        let expected = l.projections.iter().map(|p| -(l.floor / p.width).ln()).sum::<f64>() / 12.0;
        assert!((far - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let x = gaussian(40, 5, 5);
        assert_eq!(loda_score(&x, 15, 9).unwrap(), loda_score(&x, 15, 9).unwrap());
        assert_ne!(loda_score(&x, 15, 9).unwrap(), loda_score(&x, 15, 10).unwrap());
    }

    #[test]
    fn planted_outlier_seed_robust() {
        let mut wins = 0;
        for seed in 0..100 {
            let x = planted(500, seed);
            let s = loda_score(&x, 6, seed).unwrap();
            if rank_of_last(&s) < 5 {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}");
    }
}
