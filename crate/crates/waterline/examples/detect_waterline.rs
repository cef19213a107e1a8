//! Run the sliding-window detector over a synthetic frame using the geometry
//! oracle as the per-window classifier, connect the marks into a polyline,
//! and save an annotated detection map.
//!
//! Run with: cargo run --example detect_waterline

use std::fs;
use std::path::Path;

use waterline::detect::{annotate, connect_marks, scan_frame, DetectorConfig, MarkMode};
use waterline::synth::{oracle_classifier, synth_scene, BoundaryModel, SceneParams};
use waterline::Tensor;

fn main() -> waterline::Result<()> {
    let out = Path::new("target/examples/detect_waterline");
    fs::create_dir_all(out)?;

    let params = SceneParams {
        boundary: BoundaryModel::Sinusoidal {
            mean: 64.0,
            amplitude: 12.0,
            period: 100.0,
            phase: 0.4,
        },
        ripple: 6.0,
        speckle: 4.0,
        seed: 5,
        ..SceneParams::default()
    };
    let scene = synth_scene(&params)?;

    // Peephole geometry: an r x r observing field scanned with stride h; a
    // window is marked when the s x s recognizing field sees the boundary.
    let config = DetectorConfig {
        r: 16,
        s: 8,
        stride: 4,
        sample_rate: 1,
        mark_mode: MarkMode::Polyline,
    };
    let boundary = params.boundary.clone();
    let classifier = |_patch: &Tensor, center: (usize, usize)| -> waterline::Result<f64> {
        Ok(if oracle_classifier(center, config.s, &boundary) { 1.0 } else { 0.0 })
    };
    let marks = scan_frame(&scene.image, &config, config.r, &classifier)?;
    let map = connect_marks(0, &marks, config.mark_mode);
    println!(
        "marked {} window centers, polyline of {} vertices, {} estimate pixels",
        map.marks.len(),
        map.polyline.len(),
        map.estimate.len()
    );

    let gt: Vec<(i64, i64)> = (0..params.width as i64)
        .map(|x| (x, params.boundary.row(x)))
        .collect();
    let annotated = annotate(&scene.image, &map, Some(&gt));
    let path = out.join("map_0000.ppm");
    waterline::img::save_ppm(&annotated, &path)?;
    println!("annotated map (truth in red, estimate in blue): {}", path.display());
    Ok(())
}
