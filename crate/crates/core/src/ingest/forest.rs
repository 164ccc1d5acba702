//! Random-forest classifier used to estimate class confusion.
//!
//! Gini splits over a per-node feature subsample, bootstrap-sampled trees,
//! and out-of-bag class-probability estimates.

use rand::seq::index;
use rand::Rng as _;

use crate::seed::{derive_seed, rng, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            min_leaf: 5,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_proba(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(p) => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    min_leaf: usize,
    rng: Rng,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl Builder<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let mut p = vec![0.0; self.n_classes];
        for &i in idx {
            p[self.y[i]] += 1.0;
        }
        let n = idx.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Node::Leaf(p)
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let d = self.x[0].len();
        let features = index::sample(&mut self.rng, d, self.mtry.min(d));
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = vec![0usize; self.n_classes];
            let mut right = vec![0usize; self.n_classes];
            for &i in &order {
                right[self.y[i]] += 1;
            }
            let n = order.len();
            for k in 0..n - 1 {
                let c = self.y[order[k]];
                left[c] += 1;
                right[c] -= 1;
                let nl = k + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if lo >= hi {
                    continue;
                }
                let impurity = nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr);
                if best.is_none_or(|(_, _, b)| impurity < b) {
                    best = Some((f, 0.5 * (lo + hi), impurity));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if pure || idx.len() < 2 * self.min_leaf {
            self.nodes[slot] = self.leaf(&idx);
            return slot;
        }
        match self.best_split(&idx) {
            None => self.nodes[slot] = self.leaf(&idx),
            Some((feature, threshold, _)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
                let left = self.build(l);
                let right = self.build(r);
                self.nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        slot
    }
}

/// A fitted forest together with each tree's in-bag membership.
pub struct RandomForest {
    pub trees: Vec<Tree>,
    in_bag: Vec<Vec<bool>>,
    n_classes: usize,
}

impl RandomForest {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        config: &ForestConfig,
        seed: u64,
    ) -> Result<Self> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        let mut counts = vec![0usize; n_classes];
        for &c in y {
            counts[c] += 1;
        }
        if let Some(c) = counts.iter().position(|&c| c < config.min_leaf) {
            return Err(Error::TooFewPoints {
                needed: config.min_leaf,
                got: counts[c],
            });
        }
        let d = x[0].len();
        let mtry = config
            .max_features
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .max(1);
        let mut trees = Vec::with_capacity(config.n_trees);
        let mut in_bag = Vec::with_capacity(config.n_trees);
        for t in 0..config.n_trees {
            let mut r = rng(derive_seed(seed, &["tree", &t.to_string()]));
            let mut bag = vec![false; n];
            let sample: Vec<usize> = (0..n)
                .map(|_| {
                    let i = r.random_range(0..n);
                    bag[i] = true;
                    i
                })
                .collect();
            let mut b = Builder {
                x,
                y,
                n_classes,
                mtry,
                min_leaf: config.min_leaf,
                rng: r,
                nodes: Vec::new(),
            };
            b.build(sample);
            trees.push(Tree { nodes: b.nodes });
            in_bag.push(bag);
        }
        Ok(RandomForest {
            trees,
            in_bag,
            n_classes,
        })
    }

    /// Out-of-bag class probabilities for each training point. A point that
    /// was in every bootstrap sample falls back to the all-tree average.
    pub fn oob_proba(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .enumerate()
            .map(|(i, xi)| {
                let mut p = vec![0.0; self.n_classes];
                let mut k = 0;
                for (tree, bag) in self.trees.iter().zip(&self.in_bag) {
                    if !bag[i] {
                        tree.predict_proba(xi).iter().zip(&mut p).for_each(|(a, b)| *b += a);
                        k += 1;
                    }
                }
                if k == 0 {
                    for tree in &self.trees {
                        tree.predict_proba(xi).iter().zip(&mut p).for_each(|(a, b)| *b += a);
                    }
                    k = self.trees.len();
                }
                p.iter_mut().for_each(|v| *v /= k as f64);
                p
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for tree in &self.trees {
            tree.predict_proba(x).iter().zip(&mut p).for_each(|(a, b)| *b += a);
        }
        p.iter_mut().for_each(|v| *v /= self.trees.len() as f64);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[f64], per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, &mu) in centers.iter().enumerate() {
            for _ in 0..per {
                x.push(vec![mu + noise.sample(&mut r), noise.sample(&mut r)]);
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_classes_are_learned() {
        let (x, y) = blobs(&[-10.0, 10.0], 60, 1);
        let f = RandomForest::fit(&x, &y, 2, &ForestConfig::default(), 3).unwrap();
        let oob = f.oob_proba(&x);
        let correct = oob
            .iter()
            .zip(&y)
            .filter(|(p, &c)| p[c] > 0.5)
            .count();
        assert_eq!(correct, x.len());
        for p in &oob {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = blobs(&[0.0, 1.5], 40, 2);
        let cfg = ForestConfig {
            n_trees: 10,
            ..Default::default()
        };
        let a = RandomForest::fit(&x, &y, 2, &cfg, 9).unwrap().oob_proba(&x);
        let b = RandomForest::fit(&x, &y, 2, &cfg, 9).unwrap().oob_proba(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let (mut x, mut y) = blobs(&[0.0, 5.0], 20, 2);
        x.push(vec![9.0, 9.0]);
        y.push(2);
        assert!(matches!(
            RandomForest::fit(&x, &y, 3, &ForestConfig::default(), 0),
            Err(Error::TooFewPoints { .. })
        ));
    }
}
