//! Score waterline estimates against manually anchored ground truth:
//! distance-thresholded precision and recall, false-positive count,
//! irrelevance (skewness of the false-positive distances), F1, and the
//! cross-frame stability of F1.
//!
//! Run with: cargo run --example evaluate_estimates

use waterline::metrics::{evaluate_map, stability, GroundTruth, RecallMode, DEFAULT_LAMBDA};

fn show(label: &str, estimate: &[(i64, i64)], gt: &GroundTruth) -> Option<f64> {
    let r = evaluate_map(estimate, gt, DEFAULT_LAMBDA, RecallMode::Literal);
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.3}"));
    println!(
        "{label:<22} precision {}  recall {}  f1 {}  fp {}  irrelevance {}",
        fmt(r.precision),
        fmt(r.recall),
        fmt(r.f1),
        r.fp,
        fmt(r.irrelevance)
    );
    r.f1
}

fn main() -> waterline::Result<()> {
    // Anchor spacing stays below 2 * lambda so a perfect estimate can match
    // every pixel to some anchor and score precision = recall = 1.
    let gt = GroundTruth::new(vec![
        (0, 60), (15, 62), (30, 64), (45, 66), (60, 66), (75, 64), (90, 62), (105, 60), (120, 58),
    ])?;
    let truth_pixels = gt.rasterize();
    println!(
        "{} anchors rasterized to {} ground-truth pixels, lambda = {DEFAULT_LAMBDA}",
        gt.anchors.len(),
        truth_pixels.len()
    );

    let mut f1s = Vec::new();
    f1s.extend(show("perfect estimate", &truth_pixels, &gt));

    let offset: Vec<(i64, i64)> = truth_pixels.iter().map(|&(x, y)| (x, y + 4)).collect();
    f1s.extend(show("4 px vertical offset", &offset, &gt));

    let mut with_outliers = truth_pixels.clone();
    with_outliers.extend([(10, 120), (40, 5), (100, 118)]);
    f1s.extend(show("3 far false positives", &with_outliers, &gt));

    f1s.extend(show("empty estimate", &[], &gt));

    // Treat the variants as one estimate per frame of a sequence.
    println!("f1 stability across frames: {:.4}", stability(&f1s)?);
    Ok(())
}
