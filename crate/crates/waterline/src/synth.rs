//! Deterministic procedural waterline scenes: land above a boundary curve,
//! water below, optional texture and noise, exact anchors, labeled
//! two-field-layout patches, and a geometry-derived oracle classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::extract_patch;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::tensor::Tensor;

pub const ANCHOR_SPACING: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryModel {
    Horizontal { y: f64 },
    Sloped { y0: f64, slope: f64 },
    Sinusoidal { mean: f64, amplitude: f64, period: f64, phase: f64 },
}

impl BoundaryModel {
    /// Boundary height as a function of column x (continuous).
    pub fn y(&self, x: f64) -> f64 {
        match self {
            BoundaryModel::Horizontal { y } => *y,
            BoundaryModel::Sloped { y0, slope } => y0 + slope * x,
            BoundaryModel::Sinusoidal {
                mean,
                amplitude,
                period,
                phase,
            } => mean + amplitude * (std::f64::consts::TAU * x / period + phase).sin(),
        }
    }

    /// Boundary pixel row for column x (same rounding as the anchors).
    pub fn row(&self, x: i64) -> i64 {
        self.y(x as f64).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub boundary: BoundaryModel,
    pub land_color: [u8; 3],
    pub water_color: [u8; 3],
    /// Water ripple amplitude in intensity units (0 disables).
    pub ripple: f64,
    /// Land speckle amplitude in intensity units (0 disables).
    pub speckle: f64,
    /// Uniform per-pixel noise amplitude in intensity units (0 disables).
    pub noise: f64,
    /// The boundary must stay at least this far from the top/bottom edges.
    pub margin: usize,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 192,
            height: 128,
            boundary: BoundaryModel::Horizontal { y: 64.0 },
            land_color: [96, 140, 70],
            water_color: [40, 70, 150],
            ripple: 0.0,
            speckle: 0.0,
            noise: 0.0,
            margin: 30,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene dimensions must be positive".to_string()));
        }
        if 2 * self.margin >= self.height {
            return Err(Error::invalid(format!(
                "margin {} leaves no interior in a height-{} scene",
                self.margin, self.height
            )));
        }
        for x in 0..self.width {
            let y = self.boundary.y(x as f64);
            if y < self.margin as f64 || y > (self.height - self.margin) as f64 {
                return Err(Error::invalid(format!(
                    "boundary leaves the interior band at column {x} (y = {y:.1})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub params: SceneParams,
    pub image: Image,
    /// Boundary sampled every ANCHOR_SPACING columns plus the last column.
    pub anchors: Vec<(i64, i64)>,
}

/// Render a scene. Identical params give bitwise-identical output.
pub fn synth_scene(params: &SceneParams) -> Result<SyntheticScene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut image = Image::new(params.width, params.height);
    for y in 0..params.height {
        for x in 0..params.width {
            let is_land = (y as f64) < params.boundary.y(x as f64);
            let base = if is_land { params.land_color } else { params.water_color };
            let texture = if is_land {
                if params.speckle > 0.0 {
                    params.speckle * rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            } else if params.ripple > 0.0 {
                params.ripple * (x as f64 / 7.0 + y as f64 / 3.0).sin()
            } else {
                0.0
            };
            let noise = if params.noise > 0.0 {
                params.noise * rng.gen_range(-1.0..1.0)
            } else {
                0.0
            };
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                rgb[c] = (base[c] as f64 + texture + noise).round().clamp(0.0, 255.0) as u8;
            }
            image.set(x, y, rgb);
        }
    }
    let mut anchors: Vec<(i64, i64)> = (0..params.width)
        .step_by(ANCHOR_SPACING)
        .map(|x| (x as i64, params.boundary.row(x as i64)))
        .collect();
    let last = (params.width - 1) as i64;
    if anchors.last().map(|a| a.0) != Some(last) {
        anchors.push((last, params.boundary.row(last)));
    }
    Ok(SyntheticScene {
        params: params.clone(),
        image,
        anchors,
    })
}

/// Geometry oracle: 1 iff the true boundary passes through the s x s
/// recognizing field centered at `center`.
pub fn oracle_classifier(center: (usize, usize), s: usize, boundary: &BoundaryModel) -> bool {
    let ox = center.0 as i64 - (s / 2) as i64;
    let oy = center.1 as i64 - (s / 2) as i64;
    (ox..ox + s as i64).any(|x| {
        let row = boundary.row(x);
        row >= oy && row < oy + s as i64
    })
}

#[derive(Debug, Clone)]
pub struct LabeledPatch {
    pub patch: Tensor,
    /// 1 for waterline, 0 for non-waterline.
    pub label: u8,
}

/// Labeled patches in the two-field layout: positives keep the boundary inside
/// the central recognizing-field rows across the whole window; negatives miss
/// the boundary entirely. Positives first, then negatives; seeded.
pub fn synth_patch_dataset(
    scene: &SyntheticScene,
    n_pos: usize,
    n_neg: usize,
    r: usize,
    s: usize,
    out_size: usize,
    seed: u64,
) -> Result<Vec<LabeledPatch>> {
    let (w, h) = (scene.params.width, scene.params.height);
    if r > w || r > h {
        return Err(Error::invalid(format!(
            "window side {r} exceeds the {w}x{h} scene"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    let cap = 1000 * (n_pos + n_neg).max(1);
    let mut attempts = 0usize;
    let boundary = &scene.params.boundary;
    while out.len() < n_pos {
        if attempts > cap {
            return Err(Error::invalid(format!(
                "exhausted {cap} attempts with {} of {n_pos} positives emitted",
                out.len()
            )));
        }
        attempts += 1;
        let cx = rng.gen_range(0..=(w - r)) + r / 2;
        let b = boundary.row(cx as i64);
        let half = (s / 2) as i64;
        let dy = rng.gen_range(-(half - 1).max(0)..=(half - 1).max(0));
        let cy = b + dy;
        if cy < (r / 2) as i64 || cy + (r - r / 2) as i64 > h as i64 {
            continue;
        }
        let center = (cx, cy as usize);
        if patch_is_positive(center, r, s, boundary) {
            out.push(LabeledPatch {
                patch: extract_patch(&scene.image, center, r, out_size)?,
                label: 1,
            });
        }
    }
    let mut negatives = 0usize;
    while negatives < n_neg {
        if attempts > cap {
            return Err(Error::invalid(format!(
                "exhausted {cap} attempts with {negatives} of {n_neg} negatives emitted"
            )));
        }
        attempts += 1;
        let cx = rng.gen_range(0..=(w - r)) + r / 2;
        let cy = rng.gen_range(0..=(h - r)) + r / 2;
        let center = (cx, cy);
        if patch_is_negative(center, r, boundary) {
            out.push(LabeledPatch {
                patch: extract_patch(&scene.image, center, r, out_size)?,
                label: 0,
            });
            negatives += 1;
        }
    }
    Ok(out)
}

/// Boundary row stays inside the recognizing-field row band across every
/// window column (the waterline shows only in the inner field's row extent).
pub fn patch_is_positive(center: (usize, usize), r: usize, s: usize, boundary: &BoundaryModel) -> bool {
    let ox = center.0 as i64 - (r / 2) as i64;
    let top = center.1 as i64 - (s / 2) as i64;
    (ox..ox + r as i64).all(|x| {
        let row = boundary.row(x);
        row >= top && row < top + s as i64
    })
}

/// The observing field misses the boundary entirely.
pub fn patch_is_negative(center: (usize, usize), r: usize, boundary: &BoundaryModel) -> bool {
    let ox = center.0 as i64 - (r / 2) as i64;
    let top = center.1 as i64 - (r / 2) as i64;
    (ox..ox + r as i64).all(|x| {
        let row = boundary.row(x);
        row < top || row >= top + r as i64
    })
}
