//! Sliding-window waterline detection: sample frames, slide the two-field
//! peephole window across each frame, classify every receptive field, mark
//! window centers and connect the marks into an estimated waterline.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::img::{bresenham, Image};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkMode {
    CentersOnly,
    Polyline,
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Observing-field side in pixels.
    pub r: usize,
    /// Recognizing-field side in pixels.
    pub s: usize,
    /// Scan stride in pixels.
    pub stride: usize,
    /// Take every f-th frame.
    pub sample_rate: usize,
    pub mark_mode: MarkMode,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > self.s && self.s >= 1) {
            return Err(Error::invalid(format!(
                "field sizes must satisfy r > s >= 1, got r={} s={}",
                self.r, self.s
            )));
        }
        if !(1 <= self.stride && self.stride <= self.r) {
            return Err(Error::invalid(format!(
                "stride must satisfy 1 <= h <= r, got h={} r={}",
                self.stride, self.r
            )));
        }
        if self.sample_rate < 1 {
            return Err(Error::invalid("sampling rate must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Per-frame detection result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaterlineMap {
    pub frame_index: usize,
    /// Marked window centers, in scan order.
    pub marks: Vec<(i64, i64)>,
    /// Ordered polyline vertices (empty in centers-only mode).
    pub polyline: Vec<(i64, i64)>,
    /// Rasterized estimate pixel set, sorted and deduplicated.
    pub estimate: Vec<(i64, i64)>,
}

/// Indices of the frames kept at sampling rate f: 0, f, 2f, ...; ceil(k/f) of them.
pub fn sample_indices(frame_count: usize, f: usize) -> Vec<usize> {
    (0..frame_count).step_by(f.max(1)).collect()
}

/// Window origins along one axis: 0, h, 2h, ..., with the final origin clamped
/// so the last window touches the far border exactly once.
fn scan_origins(dim: usize, r: usize, h: usize) -> Vec<usize> {
    let last = dim - r;
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        if o >= last {
            out.push(last);
            break;
        }
        out.push(o);
        o += h;
    }
    out
}

/// Centers of all fully-inside r x r windows, visited row-major.
pub fn scan_positions(width: usize, height: usize, r: usize, h: usize) -> Result<Vec<(usize, usize)>> {
    if r > width || r > height {
        return Err(Error::invalid(format!(
            "window side {r} exceeds frame dimensions {width}x{height}"
        )));
    }
    let xs = scan_origins(width, r, h);
    let ys = scan_origins(height, r, h);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &oy in &ys {
        for &ox in &xs {
            out.push((ox + r / 2, oy + r / 2));
        }
    }
    Ok(out)
}

/// Crop the r x r window at `center`, resize to `out_size` with bilinear
/// interpolation, channel values scaled to [0, 1]. CxHxW output.
pub fn extract_patch(frame: &Image, center: (usize, usize), r: usize, out_size: usize) -> Result<Tensor> {
    let (cx, cy) = center;
    let ox = cx.checked_sub(r / 2).ok_or_else(|| {
        Error::invalid(format!("window at center ({cx},{cy}) leaves the frame"))
    })?;
    let oy = cy.checked_sub(r / 2).ok_or_else(|| {
        Error::invalid(format!("window at center ({cx},{cy}) leaves the frame"))
    })?;
    if ox + r > frame.width || oy + r > frame.height {
        return Err(Error::invalid(format!(
            "window origin ({ox},{oy}) side {r} leaves the {}x{} frame",
            frame.width, frame.height
        )));
    }
    let scale = r as f64 / out_size as f64;
    let mut patch = Tensor::zeros(vec![3, out_size, out_size]);
    for dy in 0..out_size {
        for dx in 0..out_size {
            // center-aligned source coordinate within the crop
            let sx = ((dx as f64 + 0.5) * scale - 0.5).clamp(0.0, (r - 1) as f64);
            let sy = ((dy as f64 + 0.5) * scale - 0.5).clamp(0.0, (r - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(r - 1);
            let y1 = (y0 + 1).min(r - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for c in 0..3 {
                let p00 = frame.get(ox + x0, oy + y0)[c] as f64;
                let p10 = frame.get(ox + x1, oy + y0)[c] as f64;
                let p01 = frame.get(ox + x0, oy + y1)[c] as f64;
                let p11 = frame.get(ox + x1, oy + y1)[c] as f64;
                let v = p00 * (1.0 - fx) * (1.0 - fy)
                    + p10 * fx * (1.0 - fy)
                    + p01 * (1.0 - fx) * fy
                    + p11 * fx * fy;
                *patch.at3_mut(c, dy, dx) = v / 255.0;
            }
        }
    }
    Ok(patch)
}

/// Classify every scan position; a center is marked iff the waterline-class
/// probability reaches 0.5. The classifier sees the extracted patch and the
/// window center, must be pure, and may be evaluated in any order.
pub fn scan_frame<F>(
    frame: &Image,
    config: &DetectorConfig,
    patch_size: usize,
    classifier: &F,
) -> Result<Vec<(i64, i64)>>
where
    F: Fn(&Tensor, (usize, usize)) -> Result<f64> + Sync,
{
    config.validate()?;
    let positions = scan_positions(frame.width, frame.height, config.r, config.stride)?;
    let flags: Vec<Result<bool>> = positions
        .par_iter()
        .map(|&center| {
            let patch = extract_patch(frame, center, config.r, patch_size)?;
            let p = classifier(&patch, center).map_err(|e| {
                Error::invalid(format!("classifier failed at center {center:?}: {e}"))
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Numeric(format!(
                    "classifier probability {p} outside [0,1] at center {center:?}"
                )));
            }
            Ok(p >= 0.5)
        })
        .collect();
    let mut marks = Vec::new();
    for (center, flag) in positions.iter().zip(flags) {
        if flag? {
            marks.push((center.0 as i64, center.1 as i64));
        }
    }
    Ok(marks)
}

/// Connect marks into a waterline estimate.
///
/// Polyline mode keeps one mark per scan column: the topmost mark in the first
/// column, then per column the mark whose y is closest to the previous
/// selection. Consecutive selections are joined by Bresenham segments; the
/// estimate set is the union of segment pixels and all marks.
pub fn connect_marks(frame_index: usize, marks: &[(i64, i64)], mode: MarkMode) -> WaterlineMap {
    let mut estimate: Vec<(i64, i64)> = marks.to_vec();
    let mut polyline = Vec::new();
    if mode == MarkMode::Polyline && !marks.is_empty() {
        let mut columns: Vec<i64> = marks.iter().map(|m| m.0).collect();
        columns.sort_unstable();
        columns.dedup();
        let mut prev_y: Option<i64> = None;
        for &x in &columns {
            let y = marks
                .iter()
                .filter(|m| m.0 == x)
                .map(|m| m.1)
                .min_by_key(|&y| match prev_y {
                    Some(p) => ((y - p).abs(), y),
                    None => (y, y),
                })
                .unwrap();
            polyline.push((x, y));
            prev_y = Some(y);
        }
        for pair in polyline.windows(2) {
            estimate.extend(bresenham(pair[0], pair[1]));
        }
    }
    estimate.sort_unstable();
    estimate.dedup();
    WaterlineMap {
        frame_index,
        marks: marks.to_vec(),
        polyline,
        estimate,
    }
}

/// Full detection loop over a frame sequence: sample, scan, connect.
pub fn detect_stream<F>(
    frames: &[Image],
    config: &DetectorConfig,
    patch_size: usize,
    classifier: &F,
) -> Result<Vec<WaterlineMap>>
where
    F: Fn(&Tensor, (usize, usize)) -> Result<f64> + Sync,
{
    config.validate()?;
    let mut maps = Vec::new();
    for idx in sample_indices(frames.len(), config.sample_rate) {
        let marks = scan_frame(&frames[idx], config, patch_size, classifier)
            .map_err(|e| Error::invalid(format!("frame {idx}: {e}")))?;
        maps.push(connect_marks(idx, &marks, config.mark_mode));
    }
    Ok(maps)
}

/// Overlay the estimate (blue) and optional ground truth (red) on a frame copy.
pub fn annotate(frame: &Image, map: &WaterlineMap, ground_truth: Option<&[(i64, i64)]>) -> Image {
    let mut out = frame.clone();
    if let Some(gt) = ground_truth {
        out.draw_pixels(gt, crate::img::RED);
    }
    out.draw_pixels(&map.estimate, crate::img::BLUE);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(r: usize, s: usize, h: usize, f: usize) -> DetectorConfig {
        DetectorConfig {
            r,
            s,
            stride: h,
            sample_rate: f,
            mark_mode: MarkMode::Polyline,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(60, 30, 30, 1).validate().is_ok());
        assert!(cfg(30, 30, 10, 1).validate().is_err()); // r must exceed s
        assert!(cfg(60, 30, 61, 1).validate().is_err()); // h <= r
        assert!(cfg(60, 30, 30, 0).validate().is_err());
    }

    #[test]
    fn sampling_indices_match_definition() {
        assert_eq!(sample_indices(10, 5), vec![0, 5]);
        assert_eq!(sample_indices(7, 3), vec![0, 3, 6]);
        assert_eq!(sample_indices(4, 1).len(), 4);
        assert!(sample_indices(0, 2).is_empty());
    }

    #[test]
    fn single_window_when_r_equals_frame() {
        let pos = scan_positions(64, 64, 64, 16).unwrap();
        assert_eq!(pos, vec![(32, 32)]);
    }

    #[test]
    fn clamped_final_origin() {
        // 100x100 frame, r=60, h=30: origins {0,30,40} each axis -> 9 windows.
        let pos = scan_positions(100, 100, 60, 30).unwrap();
        assert_eq!(pos.len(), 9);
        assert_eq!(pos[0], (30, 30));
        assert_eq!(pos[8], (70, 70));
    }

    #[test]
    fn non_overlapping_tiling() {
        let pos = scan_positions(120, 120, 60, 60).unwrap();
        assert_eq!(pos.len(), 4);
    }

    #[test]
    fn oversized_window_rejected() {
        assert!(scan_positions(32, 32, 64, 8).is_err());
    }

    #[test]
    fn unit_scale_patch_is_exact_crop() {
        let mut frame = Image::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                frame.set(x, y, [(x * 30) as u8, (y * 30) as u8, 7]);
            }
        }
        let patch = extract_patch(&frame, (4, 4), 8, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert!((patch.at3(0, y, x) - frame.get(x, y)[0] as f64 / 255.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_frame_gives_constant_patch() {
        let mut frame = Image::new(40, 40);
        for i in 0..frame.data.len() {
            frame.data[i] = if i % 3 == 0 { 200 } else { 30 };
        }
        let patch = extract_patch(&frame, (20, 20), 32, 64).unwrap();
        for v in patch.data().iter().take(64 * 64) {
            assert!((v - 200.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_frame_constant_classifiers() {
        let frame = Image::new(50, 50);
        let c = cfg(10, 5, 5, 1);
        let none = scan_frame(&frame, &c, 16, &|_: &Tensor, _| Ok(0.0)).unwrap();
        assert!(none.is_empty());
        let all = scan_frame(&frame, &c, 16, &|_: &Tensor, _| Ok(1.0)).unwrap();
        assert_eq!(all.len(), scan_positions(50, 50, 10, 5).unwrap().len());
    }

    #[test]
    fn classifier_error_names_position() {
        let frame = Image::new(30, 30);
        let c = cfg(10, 5, 10, 1);
        let err = scan_frame(&frame, &c, 16, &|_: &Tensor, _| {
            Err(crate::error::Error::invalid("boom".to_string()))
        })
        .unwrap_err();
        assert!(err.to_string().contains("center"));
    }

    #[test]
    fn connect_single_and_pair() {
        let one = connect_marks(0, &[(5, 9)], MarkMode::Polyline);
        assert_eq!(one.polyline, vec![(5, 9)]);
        assert_eq!(one.estimate, vec![(5, 9)]);

        let two = connect_marks(0, &[(10, 50), (40, 50)], MarkMode::Polyline);
        assert_eq!(two.estimate.len(), 31);
    }

    #[test]
    fn centers_only_mode_keeps_marks() {
        let m = connect_marks(3, &[(1, 1), (9, 9)], MarkMode::CentersOnly);
        assert!(m.polyline.is_empty());
        assert_eq!(m.estimate, vec![(1, 1), (9, 9)]);
    }

    #[test]
    fn column_selection_tracks_previous_row() {
        // column 0 has marks at y=0 (topmost wins), column 1 has 8 and 2:
        // 2 is closer to 0.
        let m = connect_marks(0, &[(0, 0), (1, 8), (1, 2)], MarkMode::Polyline);
        assert_eq!(m.polyline, vec![(0, 0), (1, 2)]);
        // unselected marks stay in the estimate set
        assert!(m.estimate.contains(&(1, 8)));
    }

    #[test]
    fn detect_stream_count_and_determinism() {
        let frames = vec![Image::new(40, 40), Image::new(40, 40)];
        let c = cfg(10, 5, 5, 1);
        let maps = detect_stream(&frames, &c, 16, &|_: &Tensor, _| Ok(0.0)).unwrap();
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|m| m.estimate.is_empty()));
        let again = detect_stream(&frames, &c, 16, &|_: &Tensor, _| Ok(0.0)).unwrap();
        assert_eq!(maps, again);
    }
}
