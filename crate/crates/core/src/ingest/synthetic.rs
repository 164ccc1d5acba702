use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{normalize_columns, Label, Motherset, Origin};
use crate::seed::rng;

pub const SYNTHETIC_PER_CLASS: usize = 10_000;
pub const SYNTHETIC_DIM: usize = 10;
const CUBE_HALF_WIDTH: f64 = 4.0;

/// Raw synthetic points: standard-normal candidate normals first, then
/// candidate anomalies uniform on the open cube `(-4, 4)^10`.
pub(crate) fn synthetic_raw(seed: u64) -> (DMatrix<f64>, Vec<Label>) {
    let mut r = rng(seed);
    let n = 2 * SYNTHETIC_PER_CLASS;
    let uniform = Uniform::new(-CUBE_HALF_WIDTH, CUBE_HALF_WIDTH).unwrap();
    let mut values = Vec::with_capacity(n * SYNTHETIC_DIM);
    for _ in 0..SYNTHETIC_PER_CLASS * SYNTHETIC_DIM {
        values.push(StandardNormal.sample(&mut r));
    }
    for _ in 0..SYNTHETIC_PER_CLASS * SYNTHETIC_DIM {
        // the sampler is half-open; reject the closed endpoint
        let v = loop {
            let v: f64 = uniform.sample(&mut r);
            if v > -CUBE_HALF_WIDTH {
                break v;
            }
        };
        values.push(v);
    }
    let labels = (0..n)
        .map(|i| {
            if i < SYNTHETIC_PER_CLASS {
                Label::Nominal
            } else {
                Label::Anomaly
            }
        })
        .collect();
    (DMatrix::from_row_slice(n, SYNTHETIC_DIM, &values), labels)
}

/// The synthetic control motherset, normalized like every other motherset.
pub fn generate_synthetic(seed: u64) -> Motherset {
    let (raw, labels) = synthetic_raw(seed);
    let (features, kept) = normalize_columns(&raw);
    debug_assert_eq!(kept.len(), SYNTHETIC_DIM);
    Motherset {
        name: "synthetic".into(),
        feature_names: (1..=SYNTHETIC_DIM).map(|j| format!("x{j}")).collect(),
        features,
        labels,
        origin: Origin::Synthetic,
        dropped_columns: Vec::new(),
        anomaly_source: vec!["uniform-cube".into()],
        seed: Some(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_class_sizes() {
        let m = generate_synthetic(1);
        assert_eq!(m.n(), 20_000);
        assert_eq!(m.d(), 10);
        assert_eq!(m.count(Label::Anomaly), 10_000);
        assert_eq!(m.count(Label::Nominal), 10_000);
    }

    #[test]
    fn anomalies_inside_open_cube() {
        let (raw, labels) = synthetic_raw(2);
        for (i, l) in labels.iter().enumerate() {
            if l.is_anomaly() {
                assert!(raw.row(i).iter().all(|v| v.abs() < 4.0));
            }
        }
        // normalization shrinks the spread, so the bound survives it
        let m = generate_synthetic(2);
        assert!(m.features.iter().zip(std::iter::repeat(())).count() > 0);
        for (i, l) in m.labels.iter().enumerate() {
            if l.is_anomaly() {
                assert!(m.features.row(i).iter().all(|v| v.abs() < 4.0));
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic(5).features, generate_synthetic(5).features);
        assert_ne!(generate_synthetic(5).features, generate_synthetic(6).features);
    }
}
