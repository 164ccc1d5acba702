//! Confusion-maximizing two-way partition of a multiclass problem.
//!
//! A random forest estimates how often each pair of classes is confused;
//! the maximum-weight spanning tree of that graph is two-colored by depth
//! parity and the colors become the two sides.

use super::forest::{ForestConfig, RandomForest};
use super::{RawDataset, Target};
use crate::linalg::to_rows;
use crate::{Error, Result};

/// Symmetric class-confusion weights, `w[j][k] = C[j][k] + C[k][j]`, where
/// `C[j][k]` sums the predicted probability of class k over points of class j.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionGraph {
    /// Class identifiers in lexicographic order; indices refer to this list.
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl ConfusionGraph {
    pub fn from_probabilities(classes: Vec<String>, y: &[usize], proba: &[Vec<f64>]) -> Self {
        let k = classes.len();
        let mut c = vec![vec![0.0; k]; k];
        for (&yi, p) in y.iter().zip(proba) {
            for (j, &pj) in p.iter().enumerate() {
                c[yi][j] += pj;
            }
        }
        let weights = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| if a == b { 0.0 } else { c[a][b] + c[b][a] })
                    .collect()
            })
            .collect();
        ConfusionGraph { classes, weights }
    }

    /// Edges of a maximum-weight spanning tree (Kruskal). Equal weights are
    /// taken in lexicographic order of the class pair.
    pub fn max_spanning_tree(&self) -> Vec<(usize, usize)> {
        let k = self.classes.len();
        let mut edges: Vec<(usize, usize)> = (0..k)
            .flat_map(|a| ((a + 1)..k).map(move |b| (a, b)))
            .collect();
        edges.sort_by(|&(a, b), &(c, d)| {
            self.weights[c][d]
                .total_cmp(&self.weights[a][b])
                .then_with(|| (a, b).cmp(&(c, d)))
        });
        let mut parent: Vec<usize> = (0..k).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut tree = Vec::with_capacity(k.saturating_sub(1));
        for (a, b) in edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
                tree.push((a, b));
                if tree.len() + 1 == k {
                    break;
                }
            }
        }
        tree
    }

    /// Two-colors a spanning tree by depth parity from class 0.
    pub fn two_color(&self, tree: &[(usize, usize)]) -> Vec<bool> {
        let k = self.classes.len();
        let mut adj = vec![Vec::new(); k];
        for &(a, b) in tree {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut color = vec![None; k];
        let mut stack = vec![0usize];
        color[0] = Some(false);
        while let Some(v) = stack.pop() {
            let cv = color[v].unwrap();
            for &u in &adj[v] {
                if color[u].is_none() {
                    color[u] = Some(!cv);
                    stack.push(u);
                }
            }
        }
        color.into_iter().map(|c| c.unwrap_or(false)).collect()
    }

    /// The two color classes of the maximum spanning tree.
    pub fn partition(&self) -> (Vec<String>, Vec<String>) {
        let colors = self.two_color(&self.max_spanning_tree());
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (class, c) in self.classes.iter().zip(colors) {
            if c { b.push(class.clone()) } else { a.push(class.clone()) }
        }
        (a, b)
    }
}

/// Splits the classes of a multiclass dataset into two maximally confusable
/// sets. Two-class inputs pass through unchanged.
pub fn confusion_partition(raw: &RawDataset, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let labels = match &raw.target {
        Target::Classes(c) => c,
        Target::Response(_) => {
            return Err(Error::InvalidParameter(
                "confusion partition needs class labels".into(),
            ))
        }
    };
    let classes = raw.classes();
    match classes.len() {
        0 | 1 => return Err(Error::SingleClass),
        2 => return Ok((vec![classes[0].clone()], vec![classes[1].clone()])),
        _ => {}
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|c| classes.binary_search(c).unwrap())
        .collect();
    let x = to_rows(&raw.features);
    let forest = RandomForest::fit(&x, &y, classes.len(), &ForestConfig::default(), seed)?;
    let proba = forest.oob_proba(&x);
    Ok(ConfusionGraph::from_probabilities(classes, &y, &proba).partition())
}
