//! Small numeric helpers shared across modules.

use nalgebra::DMatrix;

/// Copies a matrix into row-major vectors. Distance-heavy code works on these.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Mean and sample variance (n - 1 denominator). Variance is 0 for n < 2.
pub fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    // Welford
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    if n < 2 {
        (mean, 0.0)
    } else {
        (mean, m2 / (n - 1) as f64)
    }
}

/// Sum over columns of the per-column sample variance of the given rows.
pub fn total_variance(rows: &[&[f64]]) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    let d = rows[0].len();
    (0..d)
        .map(|j| mean_var(rows.iter().map(|r| r[j])).1)
        .sum()
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Linear-interpolated percentile, `q` in [0, 1]. Sorts `values` in place.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    values.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

pub fn median(values: &mut [f64]) -> f64 {
    percentile(values, 0.5)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean Euclidean distance over all unordered pairs of the listed rows.
pub fn mean_pairwise_distance(rows: &[Vec<f64>], idx: &[usize]) -> f64 {
    let m = idx.len();
    if m < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..m {
        for b in (a + 1)..m {
            total += dist(&rows[idx[a]], &rows[idx[b]]);
        }
    }
    total / (m * (m - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_var_matches_two_pass() {
        let v = [1.0, 2.0, 4.0, 7.0];
        let (m, s2) = mean_var(v.iter().copied());
        assert!((m - 3.5).abs() < 1e-15);
        // sum sq dev = 6.25+2.25+0.25+12.25 = 21
        assert!((s2 - 7.0).abs() < 1e-12);
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut v), 2.5);
        assert_eq!(percentile(&mut v, 1.0), 4.0);
        assert_eq!(percentile(&mut v, 0.0), 1.0);
    }

    #[test]
    fn logsumexp_handles_large_values() {
        let v = [1000.0, 1000.0];
        assert!((logsumexp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for z in [-40.0, -3.0, 0.0, 2.5, 40.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }
}
