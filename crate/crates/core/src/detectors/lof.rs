use nalgebra::DMatrix;

use super::knn::knn;
use crate::{Error, Result};

/// Local outlier factor with k-distance neighborhoods (ties included).
pub fn lof_score(data: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let n = data.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!("lof needs 1 <= k < n, got k = {k}, n = {n}")));
    }
    let nbrs = knn(data, k, true);
    let kdist: Vec<f64> = nbrs.iter().map(|nb| nb.last().map_or(0.0, |x| x.dist)).collect();
    let lrd: Vec<f64> = nbrs
        .iter()
        .map(|nb| {
            let reach = nb.iter().map(|o| kdist[o.index].max(o.dist)).sum::<f64>() / nb.len() as f64;
            1.0 / (reach + 1e-10)
        })
        .collect();
    Ok(nbrs
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().map(|o| lrd[o.index]).sum::<f64>() / (nb.len() as f64 * lrd[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use crate::linalg::{dist, to_rows};

    /// Textbook LOF straight from the definitions, O(n^2) per point.
    fn oracle(data: &DMatrix<f64>, k: usize) -> Vec<f64> {
        let rows = to_rows(data);
        let n = rows.len();
        let d = |a: usize, b: usize| dist(&rows[a], &rows[b]);
        let kdist = |p: usize| {
            let mut ds: Vec<f64> = (0..n).filter(|&o| o != p).map(|o| d(p, o)).collect();
            ds.sort_by(f64::total_cmp);
            ds[k - 1]
        };
        let hood = |p: usize| -> Vec<usize> {
            let kd = kdist(p);
            (0..n).filter(|&o| o != p && d(p, o) <= kd).collect()
        };
        let lrd = |p: usize| {
            let h = hood(p);
            let s: f64 = h.iter().map(|&o| kdist(o).max(d(p, o))).sum();
            h.len() as f64 / s
        };
        (0..n)
            .map(|p| {
                let h = hood(p);
                h.iter().map(|&o| lrd(o)).sum::<f64>() / (h.len() as f64 * lrd(p))
            })
            .collect()
    }

    #[test]
    fn matches_reference() {
        for seed in 0..3 {
            let x = gaussian(40, 3, seed);
            for k in [1, 3, 7] {
                let got = lof_score(&x, k).unwrap();
                for (a, b) in got.iter().zip(oracle(&x, k)) {
                    assert!((a - b).abs() < 1e-8 * b.max(1.0), "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn grid_interior_near_one_and_outlier_max() {
        let mut v = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                v.push(i as f64);
                v.push(j as f64);
            }
        }
        v.push(60.0);
        v.push(60.0);
        let x = DMatrix::from_row_slice(226, 2, &v);
        let s = lof_score(&x, 7).unwrap();
        for i in 3..12 {
            for j in 3..12 {
                let l = s[i * 15 + j];
                assert!((l - 1.0).abs() <= 0.2, "{l}");
            }
        }
        assert_eq!(rank_of_last(&s), 0);
        assert!(s[225] > 5.0);
    }

    #[test]
    fn duplicates_score_alike() {
        let x = gaussian(30, 2, 4);
        let both = DMatrix::from_fn(60, 2, |i, j| x[(i % 30, j)]);
        let s = lof_score(&both, 4).unwrap();
        for i in 0..30 {
            assert!((s[i] - s[i + 30]).abs() < 1e-9);
        }
        assert!(lof_score(&x, 30).is_err());
    }
}
