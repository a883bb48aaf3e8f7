//! Rotation and mirror augmentation with matching label transforms.

use rayon::prelude::*;
use serde::Serialize;

use super::{snap_box, Image, Label, LabeledImage};
use crate::geometry::{BoxCorner, BoxNorm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FlipAxis {
    /// Mirror left ↔ right; `cx ← 1 − cx`.
    Horizontal,
    /// Mirror top ↔ bottom; `cy ← 1 − cy`.
    Vertical,
}

impl FlipAxis {
    pub fn tag(self) -> char {
        match self {
            FlipAxis::Horizontal => 'h',
            FlipAxis::Vertical => 'v',
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "h" | "horizontal" => Some(FlipAxis::Horizontal),
            "v" | "vertical" => Some(FlipAxis::Vertical),
            _ => None,
        }
    }
}

pub fn flip(sample: &LabeledImage, axis: FlipAxis) -> LabeledImage {
    let src = &sample.image;
    let (w, h) = (src.width(), src.height());
    let mut image = src.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match axis {
                FlipAxis::Horizontal => (w - 1 - x, y),
                FlipAxis::Vertical => (x, h - 1 - y),
            };
            image.set(x, y, src.get(sx, sy));
        }
    }
    let labels = sample
        .labels
        .iter()
        .map(|l| {
            let b = l.bbox;
            let bbox = match axis {
                FlipAxis::Horizontal => BoxNorm::new(1.0 - b.cx, b.cy, b.w, b.h),
                FlipAxis::Vertical => BoxNorm::new(b.cx, 1.0 - b.cy, b.w, b.h),
            };
            Label {
                class_id: l.class_id,
                bbox,
            }
        })
        .collect();
    LabeledImage {
        image,
        labels,
        source_path: sample.source_path.clone(),
    }
}

/// Minimum fraction of a rotated label's enclosing box that must remain on
/// the canvas for the label to be kept.
pub const DEFAULT_MIN_VISIBLE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotateOptions {
    pub min_visible: f64,
}

impl Default for RotateOptions {
    fn default() -> Self {
        Self {
            min_visible: DEFAULT_MIN_VISIBLE,
        }
    }
}

/// Rotates about the image center onto a canvas of the same size.
///
/// Quarter turns of square images (and half turns of any image) permute
/// pixels exactly. Other angles sample the source by nearest neighbour,
/// filling uncovered pixels with black; each label becomes the axis-aligned
/// box enclosing its rotated corners, clipped to the canvas, and is dropped
/// when less than `min_visible` of that box survives the clip.
pub fn rotate(sample: &LabeledImage, degrees: f64, clockwise: bool, options: &RotateOptions) -> LabeledImage {
    let signed = if clockwise { degrees } else { -degrees };
    let turn = signed.rem_euclid(360.0);
    let square = sample.image.width() == sample.image.height();
    if turn == 0.0 {
        return sample.clone();
    }
    if turn == 180.0 || (square && (turn == 90.0 || turn == 270.0)) {
        return rotate_exact(sample, (turn / 90.0) as u8);
    }
    rotate_sampled(sample, turn, options)
}

fn rotate_exact(sample: &LabeledImage, quarters: u8) -> LabeledImage {
    let src = &sample.image;
    let (w, h) = (src.width(), src.height());
    let mut image = src.clone();
    for y in 0..h {
        for x in 0..w {
            // Destination (x, y) pulls from the source pixel that a clockwise
            // turn carries onto it.
            let (sx, sy) = match quarters {
                1 => (y, h - 1 - x),
                2 => (w - 1 - x, h - 1 - y),
                3 => (w - 1 - y, x),
                _ => unreachable!("exact path only handles 90, 180 and 270 degrees"),
            };
            image.set(x, y, src.get(sx, sy));
        }
    }
    let labels = sample
        .labels
        .iter()
        .map(|l| {
            let b = l.bbox;
            let bbox = match quarters {
                1 => BoxNorm::new(1.0 - b.cy, b.cx, b.h, b.w),
                2 => BoxNorm::new(1.0 - b.cx, 1.0 - b.cy, b.w, b.h),
                _ => BoxNorm::new(b.cy, 1.0 - b.cx, b.h, b.w),
            };
            Label {
                class_id: l.class_id,
                bbox,
            }
        })
        .collect();
    LabeledImage {
        image,
        labels,
        source_path: sample.source_path.clone(),
    }
}

fn rotate_sampled(sample: &LabeledImage, turn_degrees: f64, options: &RotateOptions) -> LabeledImage {
    let src = &sample.image;
    let (w, h) = (src.width(), src.height());
    let (wf, hf) = (w as f64, h as f64);
    let (cx, cy) = (wf / 2.0, hf / 2.0);
    let (sin, cos) = turn_degrees.to_radians().sin_cos();

    let mut image = Image::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            // Inverse of the clockwise (y-down) rotation.
            let sx = (cx + dx * cos + dy * sin).floor();
            let sy = (cy - dx * sin + dy * cos).floor();
            if sx >= 0.0 && sy >= 0.0 && sx < wf && sy < hf {
                image.set(x, y, src.get(sx as usize, sy as usize));
            }
        }
    }

    let forward = |px: f64, py: f64| {
        let (dx, dy) = (px - cx, py - cy);
        (cx + dx * cos - dy * sin, cy + dx * sin + dy * cos)
    };
    let labels = sample
        .labels
        .iter()
        .filter_map(|l| {
            let b = l.bbox;
            let (bx, by, bw, bh) = (b.cx * wf, b.cy * hf, b.w * wf, b.h * hf);
            let corners = [
                forward(bx - bw / 2.0, by - bh / 2.0),
                forward(bx + bw / 2.0, by - bh / 2.0),
                forward(bx - bw / 2.0, by + bh / 2.0),
                forward(bx + bw / 2.0, by + bh / 2.0),
            ];
            let enclosing = corners.iter().fold(
                BoxCorner::new(f64::MAX, f64::MAX, f64::MIN, f64::MIN),
                |acc, &(px, py)| BoxCorner::new(acc.x_min.min(px), acc.y_min.min(py), acc.x_max.max(px), acc.y_max.max(py)),
            );
            let clipped = enclosing.clamp(wf, hf);
            let full = enclosing.area();
            if full <= 0.0 || clipped.area() < options.min_visible * full || clipped.area() <= 0.0 {
                return None;
            }
            let norm = snap_box(BoxNorm::new(
                (clipped.x_min + clipped.x_max) / 2.0 / wf,
                (clipped.y_min + clipped.y_max) / 2.0 / hf,
                (clipped.x_max - clipped.x_min) / wf,
                (clipped.y_max - clipped.y_min) / hf,
            ));
            norm.is_valid().then_some(Label {
                class_id: l.class_id,
                bbox: norm,
            })
        })
        .collect();
    LabeledImage {
        image,
        labels,
        source_path: sample.source_path.clone(),
    }
}

/// Images per class below which a class is flagged as under-represented.
pub const DEFAULT_CLASS_FLOOR: usize = 300;

/// Expansion output with per-class image counts.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub samples: Vec<LabeledImage>,
    /// Number of output images containing at least one label of each class.
    pub class_counts: Vec<usize>,
    /// Classes whose count is below the floor.
    pub below_floor: Vec<usize>,
    pub floor: usize,
}

fn format_degrees(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    }
}

/// `<stem>_r<deg>_f<axis>`, with axis `n` for the unflipped variant.
pub fn variant_name(stem: &str, degrees: f64, flip: Option<FlipAxis>) -> String {
    let axis = flip.map_or('n', FlipAxis::tag);
    format!("{stem}_r{}_f{axis}", format_degrees(degrees))
}

/// Every sample under every clockwise rotation, each unflipped and then
/// flipped about each axis. An empty rotation list means no rotation.
pub fn expand_dataset(
    samples: &[LabeledImage],
    rotations: &[f64],
    flips: &[FlipAxis],
    num_classes: usize,
    floor: usize,
    options: &RotateOptions,
) -> Expansion {
    let angles: Vec<f64> = if rotations.is_empty() { vec![0.0] } else { rotations.to_vec() };
    let mut states: Vec<Option<FlipAxis>> = vec![None];
    for &f in flips {
        if !states.contains(&Some(f)) {
            states.push(Some(f));
        }
    }

    let per_sample: Vec<Vec<LabeledImage>> = samples
        .par_iter()
        .map(|s| {
            let mut out = Vec::with_capacity(angles.len() * states.len());
            for &deg in &angles {
                let rotated = rotate(s, deg, true, options);
                for &state in &states {
                    let mut v = match state {
                        None => rotated.clone(),
                        Some(axis) => flip(&rotated, axis),
                    };
                    v.source_path = format!("{}.ppm", variant_name(s.stem(), deg, state));
                    out.push(v);
                }
            }
            out
        })
        .collect();
    let samples: Vec<LabeledImage> = per_sample.into_iter().flatten().collect();

    let mut class_counts = vec![0usize; num_classes];
    for s in &samples {
        let mut seen = vec![false; num_classes];
        for l in &s.labels {
            if l.class_id < num_classes && !seen[l.class_id] {
                seen[l.class_id] = true;
                class_counts[l.class_id] += 1;
            }
        }
    }
    let below_floor = (0..num_classes).filter(|&c| class_counts[c] < floor).collect();
    Expansion {
        samples,
        class_counts,
        below_floor,
        floor,
    }
}
