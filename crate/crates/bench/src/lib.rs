//! Shared fixtures for the criterion benchmarks.

use adbench_core::ingest::generate_synthetic;
use adbench_core::Label;
use nalgebra::DMatrix;

/// `n` evenly spaced points of the synthetic motherset with their labels.
pub fn synthetic_points(n: usize, seed: u64) -> (DMatrix<f64>, Vec<Label>) {
    let m = generate_synthetic(seed);
    let n = n.min(m.n());
    let rows: Vec<usize> = (0..n).map(|i| i * m.n() / n).collect();
    let labels = rows.iter().map(|&i| m.labels[i]).collect();
    (m.features.select_rows(&rows), labels)
}

/// Deterministic pseudo-random scores in `[0, 1)`.
pub fn scores(n: usize, seed: u64) -> Vec<f64> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}
