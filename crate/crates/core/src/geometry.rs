//! Axis-aligned boxes, IoU, anchor decoding and grid-cell responsibility.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("cell ({row}, {col}) lies outside a {grid_n}x{grid_n} grid")]
    CellOutOfGrid { row: usize, col: usize, grid_n: usize },
    #[error("image dimensions must be positive, got {width}x{height}")]
    BadImageDims { width: f64, height: f64 },
}

/// Pixel-space box, origin top-left, y pointing down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCorner {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoxCorner {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    pub fn clamp(&self, width: f64, height: f64) -> Self {
        Self::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
    }

    pub fn intersection(&self, other: &BoxCorner) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union. Degenerate unions score 0.
pub fn iou(a: &BoxCorner, b: &BoxCorner) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Center-format box normalized by the image dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxNorm {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxNorm {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn is_valid(&self) -> bool {
        let unit = 0.0..=1.0;
        unit.contains(&self.cx)
            && unit.contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }
}

fn check_dims(width: f64, height: f64) -> Result<(), GeometryError> {
    if width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::BadImageDims { width, height })
    }
}

/// Converts a pixel box to normalized center form, clamping it to the image.
pub fn corner_to_norm(b: &BoxCorner, img_w: f64, img_h: f64) -> Result<BoxNorm, GeometryError> {
    check_dims(img_w, img_h)?;
    let b = b.clamp(img_w, img_h);
    Ok(BoxNorm {
        cx: (b.x_min + b.x_max) / 2.0 / img_w,
        cy: (b.y_min + b.y_max) / 2.0 / img_h,
        w: (b.x_max - b.x_min) / img_w,
        h: (b.y_max - b.y_min) / img_h,
    })
}

pub fn norm_to_corner(b: &BoxNorm, img_w: f64, img_h: f64) -> Result<BoxCorner, GeometryError> {
    check_dims(img_w, img_h)?;
    let (cx, cy) = (b.cx * img_w, b.cy * img_h);
    let (hw, hh) = (b.w * img_w / 2.0, b.h * img_h / 2.0);
    Ok(BoxCorner::new(cx - hw, cy - hh, cx + hw, cy + hh).clamp(img_w, img_h))
}

/// A bounding-box prior, in pixels at network input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub const fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }
}

/// The standard YOLOv4 anchors, three per scale from stride 8 to stride 32.
pub const YOLOV4_ANCHORS: [[Anchor; 3]; 3] = [
    [Anchor::new(12.0, 16.0), Anchor::new(19.0, 36.0), Anchor::new(40.0, 28.0)],
    [Anchor::new(36.0, 75.0), Anchor::new(76.0, 55.0), Anchor::new(72.0, 146.0)],
    [Anchor::new(142.0, 110.0), Anchor::new(192.0, 243.0), Anchor::new(459.0, 401.0)],
];

/// One anchor slot of one grid cell, exactly as the head emits it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
    pub objectness_logit: f64,
    pub class_logits: Vec<f64>,
    /// `(row, col)` of the emitting cell.
    pub cell: (usize, usize),
    pub scale_index: usize,
    pub anchor: Anchor,
    pub grid_n: usize,
    pub input_n: usize,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Decoded center and size in input pixels, before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Applies the anchor offset equations without clamping.
///
/// The center is `(σ(t) + cell) · stride` and the size is the anchor scaled
/// by `e^t`.
pub fn decode_raw(
    t: (f64, f64, f64, f64),
    cell: (usize, usize),
    anchor: Anchor,
    grid_n: usize,
    input_n: usize,
) -> Result<DecodedBox, GeometryError> {
    let (row, col) = cell;
    if row >= grid_n || col >= grid_n {
        return Err(GeometryError::CellOutOfGrid { row, col, grid_n });
    }
    let stride = input_n as f64 / grid_n as f64;
    Ok(DecodedBox {
        cx: (sigmoid(t.0) + col as f64) * stride,
        cy: (sigmoid(t.1) + row as f64) * stride,
        w: anchor.w * t.2.exp(),
        h: anchor.h * t.3.exp(),
    })
}

/// Decodes a prediction into a corner box clamped to `[0, input_n]`.
pub fn decode_box(
    raw: &RawPrediction,
    anchor: Anchor,
    grid_n: usize,
    input_n: usize,
) -> Result<BoxCorner, GeometryError> {
    let d = decode_raw(
        (raw.t_x, raw.t_y, raw.t_w, raw.t_h),
        raw.cell,
        anchor,
        grid_n,
        input_n,
    )?;
    let n = input_n as f64;
    Ok(BoxCorner::from_center(d.cx, d.cy, d.w, d.h).clamp(n, n))
}

/// The grid cell containing the box center, as `(row, col)`.
pub fn responsible_cell(gt: &BoxNorm, grid_n: usize) -> (usize, usize) {
    let last = grid_n.saturating_sub(1);
    let index = |v: f64| ((v * grid_n as f64).floor().max(0.0) as usize).min(last);
    (index(gt.cy), index(gt.cx))
}
