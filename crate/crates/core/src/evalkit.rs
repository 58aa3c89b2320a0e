//! Localization and presence metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{ensure, Error, Result};
use crate::ingest::SampleRecord;
use crate::nn::PredictedPoint;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const RELATIVE_DELTA: f64 = 0.15;
pub const ABSOLUTE_DELTA_MM: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationError {
    pub case_id: String,
    /// Euclidean error divided by the image diagonal.
    pub relative: f64,
    pub absolute_mm: Option<f64>,
}

pub fn localization_error(pred: &PredictedPoint, record: &SampleRecord) -> Result<LocalizationError> {
    let (gx, gy) = record.point.ok_or_else(|| {
        Error::InvalidArgument(format!("case {} has no ground-truth point", record.case_id))
    })?;
    let dist = (pred.x - gx).hypot(pred.y - gy);
    Ok(LocalizationError {
        case_id: record.case_id.clone(),
        relative: dist / record.diagonal(),
        absolute_mm: record.pixel_spacing_mm.map(|s| dist * s),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrecisionCurve {
    pub delta_max: f64,
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
    pub auc: f64,
}

fn check_errors(errors: &[f64]) -> Result<()> {
    ensure!(!errors.is_empty(), InvalidArgument, "error list is empty");
    ensure!(
        errors.iter().all(|e| *e >= 0.0 && !e.is_nan()),
        InvalidArgument,
        "errors must be non-negative numbers"
    );
    Ok(())
}

/// Exact normalized area under the precision step function on `[0, delta_max]`.
pub fn precision_auc(errors: &[f64], delta_max: f64) -> Result<f64> {
    check_errors(errors)?;
    ensure!(delta_max > 0.0, InvalidArgument, "delta_max must be positive");
    let area: f64 = errors.iter().map(|e| (delta_max - e).max(0.0)).sum();
    Ok(area / (errors.len() as f64 * delta_max))
}

/// Fraction of errors within each of `n_thresholds` evenly spaced thresholds.
pub fn precision_curve(errors: &[f64], delta_max: f64, n_thresholds: usize) -> Result<PrecisionCurve> {
    let auc = precision_auc(errors, delta_max)?;
    ensure!(n_thresholds >= 2, InvalidArgument, "need at least 2 thresholds");
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let thresholds: Vec<f64> = (0..n_thresholds)
        .map(|k| delta_max * k as f64 / (n_thresholds - 1) as f64)
        .collect();
    let fractions = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    Ok(PrecisionCurve {
        delta_max,
        thresholds,
        fractions,
        auc,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted data (`pos = q·(n−1)`).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for the precision AUC, resampling cases.
///
/// Resample `r` draws from its own generator stream, so the result does not
/// depend on evaluation order. The interval is widened to contain the point
/// estimate if the percentiles happen to exclude it.
pub fn bootstrap_auc_ci(
    errors: &[f64],
    delta_max: f64,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapCI> {
    let point = precision_auc(errors, delta_max)?;
    ensure!(n_resamples >= 100, InvalidArgument, "need at least 100 resamples, got {n_resamples}");
    ensure!(alpha > 0.0 && alpha < 1.0, InvalidArgument, "alpha must lie in (0, 1)");
    let n = errors.len();
    let mut aucs: Vec<f64> = (0..n_resamples)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let area: f64 = (0..n)
                .map(|_| (delta_max - errors[rng.random_range(0..n)]).max(0.0))
                .sum();
            area / (n as f64 * delta_max)
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    Ok(BootstrapCI {
        point,
        lo: quantile_sorted(&aucs, alpha / 2.0).min(point),
        hi: quantile_sorted(&aucs, 1.0 - alpha / 2.0).max(point),
        n_resamples,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
    /// Population standard deviation.
    pub std: f64,
    pub q1: f64,
    pub q3: f64,
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    ensure!(!errors.is_empty(), InvalidArgument, "error list is empty");
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(ErrorStats {
        mean,
        median: quantile_sorted(&sorted, 0.5),
        max: sorted[sorted.len() - 1],
        min: sorted[0],
        std: var.sqrt(),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocResult {
    pub auc: f64,
    /// DeLong variance estimate of `auc`.
    pub variance: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// 1-based midranks: tied values share the mean of their ranks.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Structural components of one score set: per-positive `V10` and per-negative `V01`.
struct Components {
    auc: f64,
    v10: Vec<f64>,
    v01: Vec<f64>,
}

fn components(pos: &[f64], neg: &[f64]) -> Components {
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let r_all = midranks(&all);
    let r_pos = midranks(pos);
    let r_neg = midranks(neg);
    // fraction of negatives each positive beats (ties half), and vice versa
    let wins: Vec<f64> = (0..pos.len()).map(|i| r_all[i] - r_pos[i]).collect();
    let v01: Vec<f64> = (0..neg.len())
        .map(|j| 1.0 - (r_all[pos.len() + j] - r_neg[j]) / m)
        .collect();
    // half-integer win counts sum exactly, so a single division gives the Mann–Whitney AUC
    let auc = wins.iter().sum::<f64>() / (m * n);
    let v10 = wins.iter().map(|w| w / n).collect();
    Components { auc, v10, v01 }
}

/// Sample covariance (÷(n−1)); zero for a single observation.
fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
}

fn delong_cov(a: &Components, b: &Components) -> f64 {
    covariance(&a.v10, &b.v10) / a.v10.len() as f64 + covariance(&a.v01, &b.v01) / a.v01.len() as f64
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    ensure!(!scores.is_empty(), InvalidArgument, "no {what} scores");
    ensure!(scores.iter().all(|s| !s.is_nan()), InvalidArgument, "{what} scores contain NaN");
    Ok(())
}

/// Mann–Whitney AUC with DeLong variance.
pub fn roc_auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<RocResult> {
    check_scores(pos_scores, "positive")?;
    check_scores(neg_scores, "negative")?;
    let c = components(pos_scores, neg_scores);
    Ok(RocResult {
        auc: c.auc,
        variance: delong_cov(&c, &c).max(0.0),
        n_pos: pos_scores.len(),
        n_neg: neg_scores.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p_two_sided: f64,
}

fn split_by_label(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let pos = scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s).collect();
    let neg = scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s).collect();
    (pos, neg)
}

/// Paired DeLong comparison of two score vectors on the same cases.
///
/// A degenerate (zero) variance gives `p = 1` for equal AUCs and `p = 0`,
/// `z = ±∞` otherwise.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongResult> {
    ensure!(
        scores_a.len() == labels.len() && scores_b.len() == labels.len(),
        InvalidArgument,
        "score vectors ({}, {}) and labels ({}) differ in length",
        scores_a.len(),
        scores_b.len(),
        labels.len()
    );
    let (pa, na) = split_by_label(scores_a, labels);
    let (pb, nb) = split_by_label(scores_b, labels);
    ensure!(
        !pa.is_empty() && !na.is_empty(),
        InvalidArgument,
        "labels must contain both classes"
    );
    check_scores(scores_a, "model A")?;
    check_scores(scores_b, "model B")?;
    let a = components(&pa, &na);
    let b = components(&pb, &nb);
    let var = delong_cov(&a, &a) + delong_cov(&b, &b) - 2.0 * delong_cov(&a, &b);
    let diff = a.auc - b.auc;
    let (z, p) = if var > 0.0 {
        let z = diff / var.sqrt();
        (z, erfc(z.abs() / std::f64::consts::SQRT_2))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        // zero variance with distinct AUCs: both models are perfect or
        // perfectly inverted on every case, so the difference is certain
        (diff.signum() * f64::INFINITY, 0.0)
    };
    Ok(DelongResult {
        auc_a: a.auc,
        auc_b: b.auc,
        z,
        p_two_sided: p.min(1.0),
    })
}

/// Distance between the two centroids, divided by the image diagonal.
pub fn mean_point_offset(set_a: &[(f64, f64)], set_b: &[(f64, f64)], image_dims: (usize, usize)) -> Result<f64> {
    ensure!(
        !set_a.is_empty() && !set_b.is_empty(),
        InvalidArgument,
        "point sets must be non-empty"
    );
    let mean = |s: &[(f64, f64)]| {
        let n = s.len() as f64;
        let (x, y) = s.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        (x / n, y / n)
    };
    let (a, b) = (mean(set_a), mean(set_b));
    let diag = (image_dims.0 as f64).hypot(image_dims.1 as f64);
    Ok((a.0 - b.0).hypot(a.1 - b.1) / diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TargetClass;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn record(gt: (f64, f64), dims: (usize, usize), spacing: Option<f64>) -> SampleRecord {
        SampleRecord {
            case_id: "c".into(),
            patient_id: "p".into(),
            image_path: String::new(),
            target_class: TargetClass::EttTip,
            point: Some(gt),
            pixel_spacing_mm: spacing,
            image_dims: dims,
        }
    }

    fn pt(x: f64, y: f64) -> PredictedPoint {
        PredictedPoint { x, y, score: 0.0 }
    }

    #[test]
    fn localization_examples() {
        let e = localization_error(&pt(0.0, 0.0), &record((30.0, 40.0), (300, 400), None)).unwrap();
        assert!((e.relative - 0.1).abs() < 1e-15);
        assert_eq!(e.absolute_mm, None);
        let e = localization_error(&pt(5.0, 5.0), &record((5.0, 5.0), (10, 10), Some(0.3))).unwrap();
        assert_eq!((e.relative, e.absolute_mm), (0.0, Some(0.0)));
        let e = localization_error(&pt(3.0, 4.0), &record((0.0, 0.0), (10, 10), Some(0.5))).unwrap();
        assert_eq!(e.absolute_mm, Some(2.5));
        let mut r = record((0.0, 0.0), (10, 10), None);
        r.point = None;
        assert!(localization_error(&pt(0.0, 0.0), &r).is_err());
    }

    #[test]
    fn precision_examples() {
        let c = precision_curve(&[0.0], 0.15, 11).unwrap();
        assert!(c.fractions.iter().all(|&f| f == 1.0));
        assert_eq!(c.auc, 1.0);
        let auc = precision_auc(&[0.05, 0.2], 0.15).unwrap();
        assert!((auc - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_auc(&[0.2, 0.3], 0.15).unwrap(), 0.0);
        assert!(precision_auc(&[], 0.15).is_err());
    }

    #[test]
    fn bootstrap_examples() {
        let ci = bootstrap_auc_ci(&[0.05; 30], 0.15, 200, 0.05, 1).unwrap();
        assert_eq!(ci.lo, ci.hi);
        let errs: Vec<f64> = (0..50).map(|i| i as f64 * 0.004).collect();
        let a = bootstrap_auc_ci(&errs, 0.15, 500, 0.05, 9).unwrap();
        assert_eq!(a, bootstrap_auc_ci(&errs, 0.15, 500, 0.05, 9).unwrap());
        assert!(a.lo < a.point && a.point < a.hi);
        assert!(bootstrap_auc_ci(&errs, 0.15, 50, 0.05, 9).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = error_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max, s.q1, s.q3), (2.5, 2.5, 1.0, 4.0, 1.75, 3.25));
        let s = error_stats(&[7.0]).unwrap();
        assert_eq!((s.mean, s.median, s.max, s.min, s.std, s.q1, s.q3), (7.0, 7.0, 7.0, 7.0, 0.0, 7.0, 7.0));
    }

    #[test]
    fn stats_match_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..80.0)).collect();
        let s = error_stats(&xs).unwrap();
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 1000.0).sqrt();
        assert!((s.mean - mean).abs() < 1e-9 && (s.std - std).abs() < 1e-9);
    }

    #[test]
    fn roc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.1, 0.5, 0.5], &[0.5, 0.1, 0.5]).unwrap().auc, 0.5);
        assert!(roc_auc(&[], &[0.1]).is_err());
    }

    #[test]
    fn structural_covariance_matches_direct_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos: Vec<f64> = (0..7).map(|_| rng.random_range(0..5) as f64).collect();
        let neg: Vec<f64> = (0..6).map(|_| (rng.random_range(0..5) as f64) - 1.0).collect();
        let psi = |x: f64, y: f64| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        let v10: Vec<f64> = pos.iter().map(|&x| neg.iter().map(|&y| psi(x, y)).sum::<f64>() / 6.0).collect();
        let v01: Vec<f64> = neg.iter().map(|&y| pos.iter().map(|&x| psi(x, y)).sum::<f64>() / 7.0).collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let want = var(&v10) / 7.0 + var(&v01) / 6.0;
        let got = roc_auc(&pos, &neg).unwrap().variance;
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn delong_examples() {
        let labels: Vec<bool> = (0..60).map(|i| i < 30).collect();
        let s: Vec<f64> = (0..60).map(|i| ((i * 37) % 61) as f64).collect();
        let r = delong_test(&s, &s, &labels).unwrap();
        assert_eq!((r.auc_a, r.p_two_sided), (r.auc_b, 1.0));
        let good: Vec<f64> = labels.iter().enumerate().map(|(i, &l)| if l { 100.0 + i as f64 } else { i as f64 }).collect();
        let bad: Vec<f64> = good.iter().map(|v| -v).collect();
        assert!(delong_test(&good, &bad, &labels).unwrap().p_two_sided < 0.01);
        assert!(delong_test(&good, &bad, &[true; 60]).is_err());
        assert!(delong_test(&good, &bad[..59], &labels).is_err());
    }

    #[test]
    fn offset_examples() {
        let a = [(0.0, 0.0), (2.0, -2.0), (-2.0, 2.0)];
        assert_eq!(mean_point_offset(&a, &a, (300, 400)).unwrap(), 0.0);
        let b = [(30.0, 40.0)];
        assert!((mean_point_offset(&a, &b, (300, 400)).unwrap() - 0.1).abs() < 1e-15);
        assert!(mean_point_offset(&[], &b, (3, 4)).is_err());
    }

    proptest! {
        #[test]
        fn roc_auc_invariant_under_monotone_transform(
            pos in prop::collection::vec(-5.0f64..5.0, 1..30),
            neg in prop::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let f = |v: &Vec<f64>| v.iter().map(|x| (x * 0.7).exp() + 3.0).collect::<Vec<_>>();
            let a = roc_auc(&pos, &neg).unwrap().auc;
            let b = roc_auc(&f(&pos), &f(&neg)).unwrap().auc;
            prop_assert!((a - b).abs() < 1e-12);
            let flipped = roc_auc(&neg, &pos).unwrap().auc;
            prop_assert!((a + flipped - 1.0).abs() < 1e-12);
        }

        #[test]
        fn delong_is_antisymmetric(
            a in prop::collection::vec(0.0f64..1.0, 12),
            b in prop::collection::vec(0.0f64..1.0, 12),
        ) {
            let labels: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
            let ab = delong_test(&a, &b, &labels).unwrap();
            let ba = delong_test(&b, &a, &labels).unwrap();
            prop_assert!((ab.z + ba.z).abs() < 1e-12);
            prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
        }

        #[test]
        fn fractions_non_decreasing(errs in prop::collection::vec(0.0f64..0.3, 1..50)) {
            let c = precision_curve(&errs, 0.15, 31).unwrap();
            prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((0.0..=1.0).contains(&c.auc));
        }

        #[test]
        fn bootstrap_contains_point(errs in prop::collection::vec(0.0f64..0.3, 1..40), seed in 0u64..1000) {
            let ci = bootstrap_auc_ci(&errs, 0.15, 100, 0.05, seed).unwrap();
            prop_assert!(ci.lo <= ci.point && ci.point <= ci.hi);
        }
    }
}
