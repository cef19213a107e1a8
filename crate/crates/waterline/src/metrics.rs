//! Evaluation suite for waterline estimates: distance-thresholded
//! precision/recall, false-positive count, skewness-based irrelevance,
//! cross-frame stability and F1.
//!
//! Matching is against the manually marked anchors; the rasterized
//! ground-truth pixel set only enters as the recall denominator.

use crate::error::{Error, Result};
use crate::img::bresenham;

pub const DEFAULT_LAMBDA: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Anchor pixels in left-to-right order.
    pub anchors: Vec<(i64, i64)>,
}

impl GroundTruth {
    pub fn new(anchors: Vec<(i64, i64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::invalid("ground truth needs at least one anchor".to_string()));
        }
        Ok(GroundTruth { anchors })
    }

    /// Union of Bresenham segments between consecutive anchors, deduplicated.
    pub fn rasterize(&self) -> Vec<(i64, i64)> {
        rasterize_ground_truth(&self.anchors).expect("anchors checked non-empty")
    }
}

/// How the recall denominator's numerator counts matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecallMode {
    /// matched-estimate-count / |g|; can exceed 1 when estimates cluster.
    #[default]
    Literal,
    /// fraction of ground-truth pixels within lambda of some estimate pixel.
    GtCoverage,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fp: usize,
    pub irrelevance: Option<f64>,
    pub lambda: f64,
    pub estimate_count: usize,
    pub gt_count: usize,
}

pub fn rasterize_ground_truth(anchors: &[(i64, i64)]) -> Result<Vec<(i64, i64)>> {
    if anchors.is_empty() {
        return Err(Error::invalid("cannot rasterize an empty anchor list".to_string()));
    }
    let mut pixels: Vec<(i64, i64)> = if anchors.len() == 1 {
        vec![anchors[0]]
    } else {
        anchors
            .windows(2)
            .flat_map(|pair| bresenham(pair[0], pair[1]))
            .collect()
    };
    pixels.sort_unstable();
    pixels.dedup();
    Ok(pixels)
}

/// Minimum Euclidean distance from a pixel to any anchor.
pub fn match_distance(e: (i64, i64), anchors: &[(i64, i64)]) -> f64 {
    anchors
        .iter()
        .map(|a| {
            let dx = (e.0 - a.0) as f64;
            let dy = (e.1 - a.1) as f64;
            (dx * dx + dy * dy).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

fn matched_count(estimate: &[(i64, i64)], anchors: &[(i64, i64)], lambda: f64) -> usize {
    estimate
        .iter()
        .filter(|&&e| match_distance(e, anchors) <= lambda)
        .count()
}

/// Fraction of estimate pixels within lambda of some anchor; None when the
/// estimate set is empty (undefined, distinct from zero).
pub fn precision(estimate: &[(i64, i64)], anchors: &[(i64, i64)], lambda: f64) -> Option<f64> {
    if estimate.is_empty() {
        return None;
    }
    Some(matched_count(estimate, anchors, lambda) as f64 / estimate.len() as f64)
}

pub fn recall(
    estimate: &[(i64, i64)],
    anchors: &[(i64, i64)],
    gt_pixels: &[(i64, i64)],
    lambda: f64,
    mode: RecallMode,
) -> Result<f64> {
    if gt_pixels.is_empty() {
        return Err(Error::invalid("recall needs a non-empty ground-truth pixel set".to_string()));
    }
    match mode {
        RecallMode::Literal => {
            Ok(matched_count(estimate, anchors, lambda) as f64 / gt_pixels.len() as f64)
        }
        RecallMode::GtCoverage => {
            let covered = gt_pixels
                .iter()
                .filter(|&&g| match_distance(g, estimate) <= lambda)
                .count();
            Ok(covered as f64 / gt_pixels.len() as f64)
        }
    }
}

/// False positives: estimate pixels farther than lambda from every anchor,
/// with their min-distance multiset.
pub fn fp_count(estimate: &[(i64, i64)], anchors: &[(i64, i64)], lambda: f64) -> (usize, Vec<f64>) {
    let distances: Vec<f64> = estimate
        .iter()
        .map(|&e| match_distance(e, anchors))
        .filter(|&d| d > lambda)
        .collect();
    (distances.len(), distances)
}

/// Adjusted Fisher-Pearson sample skewness G1 of the FP distance multiset.
/// None when fewer than 3 distances or zero spread.
pub fn irrelevance(distances: &[f64]) -> Option<f64> {
    let n = distances.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mean = distances.iter().sum::<f64>() / nf;
    let m2 = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / nf;
    let m3 = distances.iter().map(|d| (d - mean).powi(3)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return None;
    }
    let g1 = m3 / m2.powf(1.5);
    Some((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1)
}

/// Harmonic mean of precision and recall; 0 by convention when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// (mean - median) / sample standard deviation of a metric across image-maps;
/// 0 by convention when the spread is zero.
pub fn stability(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("stability needs at least 2 samples".to_string()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(0.0);
    }
    Ok((mean - median(samples)) / var.sqrt())
}

/// Median with the even-count convention of averaging the two central order
/// statistics, so any two-sample multiset has stability 0.
fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// All per-frame metrics in one pass. Component errors become undefined
/// fields; the report itself never aborts.
pub fn evaluate_map(
    estimate: &[(i64, i64)],
    ground_truth: &GroundTruth,
    lambda: f64,
    mode: RecallMode,
) -> MetricReport {
    let anchors = &ground_truth.anchors;
    let gt_pixels = ground_truth.rasterize();
    let p = precision(estimate, anchors, lambda);
    let r = recall(estimate, anchors, &gt_pixels, lambda, mode).ok();
    let (fp, distances) = fp_count(estimate, anchors, lambda);
    MetricReport {
        precision: p,
        recall: r,
        f1: match (p, r) {
            (Some(p), Some(r)) => Some(f1(p, r)),
            _ => None,
        },
        fp,
        irrelevance: irrelevance(&distances),
        lambda,
        estimate_count: estimate.len(),
        gt_count: gt_pixels.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rasterize_examples() {
        assert_eq!(rasterize_ground_truth(&[(0, 0)]).unwrap(), vec![(0, 0)]);
        assert_eq!(rasterize_ground_truth(&[(0, 0), (3, 0)]).unwrap().len(), 4);
        assert!(rasterize_ground_truth(&[]).is_err());
    }

    #[test]
    fn match_distance_examples() {
        assert_eq!(match_distance((5, 5), &[(5, 5), (0, 0)]), 0.0);
        assert_eq!(match_distance((3, 4), &[(0, 0)]), 5.0);
    }

    #[test]
    fn precision_examples() {
        let anchors = vec![(0i64, 0i64)];
        assert_eq!(precision(&[(0, 0), (10, 0)], &anchors, 5.0), Some(0.5));
        assert_eq!(precision(&[], &anchors, 5.0), None);
        // perfect detection: estimate equals rasterized ground truth
        let gt = GroundTruth::new(vec![(0, 0), (20, 0)]).unwrap();
        let g = gt.rasterize();
        assert_eq!(precision(&g, &gt.anchors, 10.0), Some(1.0));
    }

    #[test]
    fn recall_literal_can_exceed_one() {
        let anchors = vec![(0i64, 0i64)];
        let g = vec![(0i64, 0i64)];
        let e = vec![(0i64, 0i64), (1, 0)];
        assert_eq!(recall(&e, &anchors, &g, 5.0, RecallMode::Literal).unwrap(), 2.0);
        assert_eq!(recall(&e, &anchors, &g, 5.0, RecallMode::GtCoverage).unwrap(), 1.0);
        assert!(recall(&e, &anchors, &[], 5.0, RecallMode::Literal).is_err());
    }

    #[test]
    fn recall_perfect_detection() {
        let gt = GroundTruth::new(vec![(0, 0), (9, 0)]).unwrap();
        let g = gt.rasterize();
        // lambda must cover the inter-anchor gap for the identity to hold
        for mode in [RecallMode::Literal, RecallMode::GtCoverage] {
            assert_eq!(recall(&g, &gt.anchors, &g, 10.0, mode).unwrap(), 1.0);
        }
    }

    #[test]
    fn fp_examples() {
        let anchors = vec![(0i64, 0i64)];
        let (n, d) = fp_count(&[(0, 0), (10, 0)], &anchors, 5.0);
        assert_eq!(n, 1);
        assert_eq!(d, vec![10.0]);
        let gt = GroundTruth::new(vec![(0, 0), (6, 0)]).unwrap();
        let g = gt.rasterize();
        assert_eq!(fp_count(&g, &gt.anchors, 10.0).0, 0);
    }

    #[test]
    fn irrelevance_symmetric_is_zero() {
        assert!(irrelevance(&[1.0, 2.0, 3.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn irrelevance_known_value_and_permutation_invariance() {
        let a = irrelevance(&[11.0, 12.0, 20.0]).unwrap();
        assert!((a - 1.65).abs() < 0.01, "got {a}");
        let b = irrelevance(&[20.0, 12.0, 11.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn irrelevance_undefined_cases() {
        assert_eq!(irrelevance(&[1.0, 2.0]), None);
        assert_eq!(irrelevance(&[3.0, 3.0, 3.0]), None);
    }

    #[test]
    fn irrelevance_is_scale_free() {
        let base = [11.0, 13.5, 20.0, 40.0, 11.2];
        let a = irrelevance(&base).unwrap();
        let scaled: Vec<f64> = base.iter().map(|d| d * 7.25).collect();
        let b = irrelevance(&scaled).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(0.3, 0.3), 0.3);
        assert!((f1(0.965, 0.982) - 0.9734).abs() < 1e-3);
        assert_eq!(f1(1.0, 0.0), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn stability_examples() {
        assert_eq!(stability(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let s = stability(&[1.0, 1.0, 4.0]).unwrap();
        assert!((s - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(stability(&[2.5, 2.5, 2.5]).unwrap(), 0.0);
        assert!(stability(&[1.0]).is_err());
    }

    #[test]
    fn two_sample_stability_is_always_zero() {
        for (a, b) in [(0.0, 1.0), (-3.0, 17.5), (2.0, 2.0)] {
            assert_eq!(stability(&[a, b]).unwrap(), 0.0);
        }
    }

    #[test]
    fn evaluate_map_perfect_and_offset() {
        // anchors 15 apart: every segment pixel is within lambda of one
        let gt = GroundTruth::new(vec![(0, 10), (15, 10), (30, 10)]).unwrap();
        let g = gt.rasterize();
        let report = evaluate_map(&g, &gt, 10.0, RecallMode::Literal);
        assert_eq!(report.precision, Some(1.0));
        assert_eq!(report.recall, Some(1.0));
        assert_eq!(report.f1, Some(1.0));
        assert_eq!(report.fp, 0);
        assert_eq!(report.irrelevance, None);

        // everything offset by 2*lambda
        let offset: Vec<(i64, i64)> = g.iter().map(|&(x, y)| (x, y + 20)).collect();
        let report = evaluate_map(&offset, &gt, 10.0, RecallMode::Literal);
        assert_eq!(report.precision, Some(0.0));
        assert_eq!(report.fp, offset.len());
    }

    #[test]
    fn matched_plus_fp_partitions_estimate() {
        let gt = GroundTruth::new(vec![(0, 0), (50, 3)]).unwrap();
        let est: Vec<(i64, i64)> = (0..40).map(|i| (i, (i * 7 % 23) - 5)).collect();
        let p = precision(&est, &gt.anchors, 10.0).unwrap();
        let (fp, _) = fp_count(&est, &gt.anchors, 10.0);
        let matched = (p * est.len() as f64).round() as usize;
        assert_eq!(matched + fp, est.len());
    }

    #[test]
    fn translation_invariance() {
        let anchors = vec![(3i64, 4i64), (20, 9)];
        let est = vec![(1i64, 1i64), (10, 6), (25, 30)];
        let (dx, dy) = (17i64, -6i64);
        let anchors_t: Vec<_> = anchors.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let est_t: Vec<_> = est.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        assert_eq!(
            precision(&est, &anchors, 10.0),
            precision(&est_t, &anchors_t, 10.0)
        );
        assert_eq!(fp_count(&est, &anchors, 10.0).0, fp_count(&est_t, &anchors_t, 10.0).0);
    }
}
