use nalgebra::DMatrix;

use super::knn::knn;
use crate::linalg::{mean_var, to_rows};
use crate::{Error, Result};

/// Angle-based outlier factor of `p` against `refs`: the sample variance of
/// `<a-p, b-p> / (|a-p|^2 |b-p|^2)` over pairs of reference points. `None`
/// when fewer than two pairs have non-zero length.
pub(crate) fn angle_variance(p: &[f64], refs: &[&[f64]]) -> Option<f64> {
    let diffs: Vec<(Vec<f64>, f64)> = refs
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().zip(p).map(|(a, b)| a - b).collect();
            let sq = v.iter().map(|x| x * x).sum();
            (v, sq)
        })
        .collect();
    let mut vals = Vec::new();
    for a in 0..diffs.len() {
        for b in (a + 1)..diffs.len() {
            let (va, na) = &diffs[a];
            let (vb, nb) = &diffs[b];
            if *na == 0.0 || *nb == 0.0 {
                continue;
            }
            let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
            vals.push(dot / (na * nb));
        }
    }
    (vals.len() >= 2).then(|| mean_var(vals.into_iter()).1)
}

/// kNN angle-based outlier detection; the score is the negated angle
/// variance over pairs of the k nearest neighbors.
pub fn abod_score(data: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let n = data.nrows();
    if k < 2 || k >= n {
        return Err(Error::InvalidParameter(format!("abod needs 2 <= k < n, got k = {k}, n = {n}")));
    }
    let rows = to_rows(data);
    let nbrs = knn(data, k, false);
    let raw: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let refs: Vec<&[f64]> = nbrs[i].iter().map(|nb| rows[nb.index].as_slice()).collect();
            angle_variance(&rows[i], &refs).map(|v| -v)
        })
        .collect();
    let max = raw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let fill = if max.is_finite() { max } else { 0.0 };
    Ok(raw.into_iter().map(|s| s.unwrap_or(fill)).collect())
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    /// Cubic ABOD over all pairs of other points, written out directly.
    fn full_abod(data: &DMatrix<f64>) -> Vec<f64> {
        let n = data.nrows();
        (0..n)
            .map(|p| {
                let mut vals = Vec::new();
                for a in 0..n {
                    for b in (a + 1)..n {
                        if a == p || b == p {
                            continue;
                        }
                        let pa = data.row(a) - data.row(p);
                        let pb = data.row(b) - data.row(p);
                        vals.push(pa.dot(&pb) / (pa.norm_squared() * pb.norm_squared()));
                    }
                }
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                -vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64
            })
            .collect()
    }

    fn ring(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |i, j| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            if j == 0 { 5.0 * t.cos() } else { 5.0 * t.sin() }
        })
    }

    #[test]
    fn knn_with_all_points_equals_cubic() {
        for seed in 0..3 {
            let x = gaussian(25, 3, seed);
            let got = abod_score(&x, 24).unwrap();
            for (a, b) in got.iter().zip(full_abod(&x)) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} {b}");
            }
        }
    }

    #[test]
    fn ring_center_and_outside() {
        let r = ring(40);
        let mut x = DMatrix::zeros(42, 2);
        x.view_mut((0, 0), (40, 2)).copy_from(&r);
        // center point, then a far point
        x[(41, 0)] = 40.0;
        let full = full_abod(&x);
        let s = abod_score(&x, 41).unwrap();
        assert_eq!(rank_of_last(&s), 0);
        assert!(s[40] < s[41]);
        // the far point sees every pair at nearly the same angle
        assert!(-s[41] < 1e-3 * -s[40], "{} {}", s[41], s[40]);
        for i in 0..42 {
            assert!((s[i] - full[i]).abs() <= 1e-9 * full[i].abs().max(1.0));
        }
    }

    #[test]
    fn coincident_points_get_max() {
        // three identical points: every pair involving a duplicate is skipped
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 0.0, 0.0, 1.0, 3.0]);
        let s = abod_score(&x, 3).unwrap();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s[0], max);
        assert!(s.iter().all(|v| v.is_finite()));
    }
}
