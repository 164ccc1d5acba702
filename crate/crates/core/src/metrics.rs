//! Ranking metrics: ROC AUC, average precision, the exact expectation of AP
//! under uniformly random ranking, and the transformed metrics used for
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::ingest::Label;
use crate::linalg::logit;
use crate::seed;
use crate::{Error, Result};

/// AUC is clipped to `[AUC_CLIP, 1 - AUC_CLIP]` before the logit.
pub const AUC_CLIP: f64 = 1e-6;

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let n_anom = labels.iter().filter(|l| l.is_anomaly()).count();
    (n_anom, labels.len() - n_anom)
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let (a, n) = class_counts(labels);
    if a == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    Ok((a, n))
}

/// Probability that a random anomaly outscores a random nominal, ties
/// counted as one half (Mann-Whitney U / (n_anom * n_norm)).
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (n_anom, n_norm) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of mid-ranks (1-based, ascending) of the anomalies. Ranks are
    // integers or half-integers so the sum is exact.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j + 2) as f64 / 2.0;
        let anomalies_in_tie = order[i..=j]
            .iter()
            .filter(|&&k| labels[k].is_anomaly())
            .count();
        rank_sum += mid * anomalies_in_tie as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_anom * (n_anom + 1)) as f64 / 2.0;
    Ok(u / (n_anom as f64 * n_norm as f64))
}

/// Non-interpolated average precision. Points are ranked by descending
/// score; tied scores are ordered by ascending point index.
pub fn average_precision(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let keys: Vec<usize> = (0..scores.len()).collect();
    ap_with_tie_keys(scores, labels, &keys)
}

/// Average precision with ties broken by ascending index after a seeded
/// shuffle of the points. Identical to [`average_precision`] when there are
/// no tied scores.
pub fn average_precision_seeded(scores: &[f64], labels: &[Label], tie_seed: u64) -> Result<f64> {
    use rand::seq::SliceRandom;
    let mut keys: Vec<usize> = (0..scores.len()).collect();
    keys.shuffle(&mut seed::rng(tie_seed));
    ap_with_tie_keys(scores, labels, &keys)
}

fn ap_with_tie_keys(scores: &[f64], labels: &[Label], keys: &[usize]) -> Result<f64> {
    let (n_anom, _) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx].is_anomaly() {
            hits += 1;
            total += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(total / n_anom as f64)
}

/// Exact expectation of average precision when the `n_anom + n_norm` points
/// are ranked uniformly at random.
///
/// Writing AP as `(1/R) sum_k rel_k * prec@k` and taking expectations
/// position by position gives
/// `E[AP] = (1/N) * (H_N + (R - 1)/(N - 1) * (N - H_N))`
/// with `N = n_anom + n_norm`, `R = n_anom` and `H_N` the N-th harmonic number.
pub fn expected_ap(n_anom: usize, n_norm: usize) -> Result<f64> {
    if n_anom == 0 {
        return Err(Error::InvalidParameter(
            "expected AP needs at least one anomaly".into(),
        ));
    }
    let n = n_anom + n_norm;
    let nf = n as f64;
    let harmonic: f64 = (1..=n).rev().map(|k| 1.0 / k as f64).sum();
    if n == 1 {
        return Ok(1.0);
    }
    let pair_term = (n_anom - 1) as f64 / (nf - 1.0) * (nf - harmonic);
    Ok((harmonic + pair_term) / nf)
}

/// One detector's metrics on one benchmark, with the transforms applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub auc: f64,
    pub ap: f64,
    pub expected_ap: f64,
    pub logit_auc: f64,
    pub log_lift: f64,
    pub trivial_log_ratio_auc: Option<f64>,
    pub trivial_log_ratio_ap: Option<f64>,
}

pub fn logit_auc(auc: f64) -> f64 {
    logit(auc.clamp(AUC_CLIP, 1.0 - AUC_CLIP))
}

/// Builds a [`MetricRecord`]. `trivial` carries the trivial baseline's
/// `(auc, ap)` on the same benchmark when available.
pub fn transform(auc: f64, ap: f64, expected_ap: f64, trivial: Option<(f64, f64)>) -> MetricRecord {
    let (ratio_auc, ratio_ap) = match trivial {
        Some((t_auc, t_ap)) => (
            Some((auc.max(AUC_CLIP) / t_auc.max(AUC_CLIP)).ln()),
            Some((ap / t_ap).ln()),
        ),
        None => (None, None),
    };
    MetricRecord {
        auc,
        ap,
        expected_ap,
        logit_auc: logit_auc(auc),
        log_lift: (ap / expected_ap).ln(),
        trivial_log_ratio_auc: ratio_auc,
        trivial_log_ratio_ap: ratio_ap,
    }
}

/// Computes every field of a [`MetricRecord`] from raw scores.
pub fn evaluate_scores(
    scores: &[f64],
    labels: &[Label],
    tie_seed: u64,
    trivial: Option<(f64, f64)>,
) -> Result<MetricRecord> {
    let (n_anom, n_norm) = check_inputs(scores, labels)?;
    let a = auc(scores, labels)?;
    let ap = average_precision_seeded(scores, labels, tie_seed)?;
    Ok(transform(a, ap, expected_ap(n_anom, n_norm)?, trivial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label::{Anomaly as A, Nominal as N};
    use crate::linalg::sigmoid;

    #[test]
    fn auc_extremes() {
        let labels = [N, N, A, A];
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[4.0, 3.0, 2.0, 1.0], &labels).unwrap(), 0.0);
    }

    #[test]
    fn auc_pairwise_example() {
        // anomalies at scores 2 and 4: pairs (2>1), (2<3), (4>1), (4>3)
        let labels = [N, A, N, A];
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &labels).unwrap(), 0.75);
    }

    #[test]
    fn auc_ties_get_half_credit() {
        assert_eq!(auc(&[1.0, 1.0], &[N, A]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(auc(&[1.0, 2.0], &[A, A]), Err(Error::SingleClass)));
        assert!(matches!(
            average_precision(&[1.0, 2.0], &[N, N]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn ap_examples() {
        // single anomaly ranked first
        assert_eq!(average_precision(&[9.0, 1.0, 2.0], &[A, N, N]).unwrap(), 1.0);
        // single anomaly ranked second of two
        assert_eq!(average_precision(&[1.0, 2.0], &[A, N]).unwrap(), 0.5);
        // anomalies at ranks 1 and 3 of 4
        let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &[A, N, A, N]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_tie_break_by_index() {
        // all tied: order is by index, anomaly at index 1 gets rank 2
        assert_eq!(average_precision(&[0.0, 0.0], &[N, A]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.0, 0.0], &[A, N]).unwrap(), 1.0);
    }

    #[test]
    fn seeded_ap_matches_plain_without_ties() {
        let s = [0.3, 0.1, 0.9, 0.5];
        let l = [A, N, N, A];
        assert_eq!(
            average_precision(&s, &l).unwrap(),
            average_precision_seeded(&s, &l, 17).unwrap()
        );
    }

    #[test]
    fn expected_ap_small_cases() {
        assert!((expected_ap(1, 1).unwrap() - 0.75).abs() < 1e-15);
        for n in 1..6 {
            assert!((expected_ap(n, 0).unwrap() - 1.0).abs() < 1e-14);
        }
        assert!(expected_ap(0, 3).is_err());
    }

    #[test]
    fn transform_fixtures() {
        let r = transform(0.7482, 1.0, 1.0, None);
        assert!((r.logit_auc - 1.089_035_200_303_799).abs() < 1e-12);
        // the published score 1.0893 maps back to an AUC that rounds to 0.7482
        assert!((sigmoid(1.0893) - 0.7482).abs() < 5e-5);
        assert_eq!(r.log_lift, 0.0);
        let r = transform(0.5, 2.9796, 1.0, Some((0.5, 2.9796)));
        assert!((r.log_lift - 1.0918).abs() < 1e-4);
        assert_eq!(r.trivial_log_ratio_auc, Some(0.0));
        assert_eq!(r.trivial_log_ratio_ap, Some(0.0));
    }

    #[test]
    fn logit_is_clipped() {
        assert!(logit_auc(1.0).is_finite());
        assert!(logit_auc(0.0).is_finite());
        assert!((logit_auc(1.0) - logit(1.0 - AUC_CLIP)).abs() < 1e-12);
    }
}
