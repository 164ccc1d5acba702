use nalgebra::DMatrix;

use crate::linalg::{dist, to_rows};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

/// Exact neighbors of every row, nearest first (ties by index), excluding
/// the row itself. Returns at least `k` neighbors per row; with
/// `include_ties` every point at the k-th distance is kept as well.
pub fn knn(data: &DMatrix<f64>, k: usize, include_ties: bool) -> Vec<Vec<Neighbor>> {
    let rows = to_rows(data);
    let n = rows.len();
    let k = k.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(n);
    let mut buf: Vec<Neighbor> = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend((0..n).filter(|&j| j != i).map(|j| Neighbor {
            index: j,
            dist: dist(&rows[i], &rows[j]),
        }));
        let cmp = |a: &Neighbor, b: &Neighbor| a.dist.total_cmp(&b.dist).then(a.index.cmp(&b.index));
        if k == 0 {
            out.push(Vec::new());
            continue;
        }
        if k < buf.len() {
            buf.select_nth_unstable_by(k - 1, cmp);
        }
        let kth = buf[..k].iter().map(|nb| nb.dist).fold(f64::NEG_INFINITY, f64::max);
        let mut nbrs: Vec<Neighbor> = if include_ties {
            buf.iter().filter(|nb| nb.dist <= kth).copied().collect()
        } else {
            buf[..k].to_vec()
        };
        nbrs.sort_by(cmp);
        out.push(nbrs);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_and_order() {
        // points on a line: 0, 1, -1, 2
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, -1.0, 2.0]);
        let nb = knn(&x, 1, false);
        assert_eq!(nb[0].len(), 1);
        assert_eq!(nb[0][0].index, 1);
        let nb = knn(&x, 1, true);
        let idx: Vec<usize> = nb[0].iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 2]);
        assert_eq!(nb[3][0].index, 1);
        assert_eq!(knn(&x, 10, false)[0].len(), 3);
    }
}
