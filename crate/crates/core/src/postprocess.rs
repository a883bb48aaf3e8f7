//! From raw head tensors to labelled detections.
//!
//! The pipeline for one frame is extract → score → non-max suppression →
//! confidence gate. Scoring assigns every prediction to its best class
//! (sigmoid per class logit, lowest index on ties); the gate then only
//! emits detections whose combined confidence reaches a floor.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{self, iou, Anchor, BoxCorner, GeometryError, RawPrediction};
use crate::netdef::{head_channels, SizingError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PostprocessError {
    #[error("head has {found} channels, {expected} expected for {classes} classes")]
    HeadChannels {
        expected: usize,
        found: usize,
        classes: usize,
    },
    #[error("head is {height}x{width}, expected a square grid")]
    NonSquareHead { height: usize, width: usize },
    #[error("head grids {grids:?} are not consistent with strides 8/16/32 of one input size")]
    InconsistentGrids { grids: [usize; 3] },
    #[error("ground truth {index} collides with an earlier one at scale {scale}, cell {cell:?}, slot {slot}")]
    TargetCollision {
        index: usize,
        scale: usize,
        cell: (usize, usize),
        slot: usize,
    },
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T, E = PostprocessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoxCorner,
    pub class_id: usize,
    pub class_name: String,
    pub objectness: f64,
    pub class_score: f64,
    /// `objectness × class_score`.
    pub confidence: f64,
}

/// Which score the objectness threshold and the suppression order use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    #[default]
    Confidence,
    Objectness,
}

impl ScoreSource {
    fn of(self, d: &Detection) -> f64 {
        match self {
            ScoreSource::Confidence => d.confidence,
            ScoreSource::Objectness => d.objectness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NmsConfig {
    pub objectness_threshold: f64,
    pub iou_threshold: f64,
    pub score_source: ScoreSource,
    /// Only suppress boxes of the same class.
    pub per_class: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            objectness_threshold: 0.25,
            iou_threshold: 0.45,
            score_source: ScoreSource::Confidence,
            per_class: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectConfig {
    pub nms: NmsConfig,
    pub confidence_floor: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            nms: NmsConfig::default(),
            confidence_floor: 0.5,
        }
    }
}

/// Splits one `grid × grid × 3·(5+C)` head into per-slot predictions.
///
/// Predictions are ordered by cell (row-major) then anchor slot. Each slot
/// occupies `5 + C` consecutive channels: `t_x, t_y, t_w, t_h, obj,
/// class_0 … class_{C-1}`.
pub fn extract_predictions(
    head: &Tensor,
    anchors: &[Anchor; 3],
    num_classes: usize,
    input_n: usize,
    scale_index: usize,
) -> Result<Vec<RawPrediction>> {
    let expected = head_channels(num_classes)?;
    if head.channels() != expected {
        return Err(PostprocessError::HeadChannels {
            expected,
            found: head.channels(),
            classes: num_classes,
        });
    }
    if head.height() != head.width() {
        return Err(PostprocessError::NonSquareHead {
            height: head.height(),
            width: head.width(),
        });
    }
    let grid_n = head.height();
    let slot_len = 5 + num_classes;
    let values = head.values();
    let mut out = Vec::with_capacity(grid_n * grid_n * 3);
    for row in 0..grid_n {
        for col in 0..grid_n {
            let base = head.index(row, col, 0);
            for (slot, anchor) in anchors.iter().enumerate() {
                let s = &values[base + slot * slot_len..base + (slot + 1) * slot_len];
                out.push(RawPrediction {
                    t_x: s[0],
                    t_y: s[1],
                    t_w: s[2],
                    t_h: s[3],
                    objectness_logit: s[4],
                    class_logits: s[5..].to_vec(),
                    cell: (row, col),
                    scale_index,
                    anchor: *anchor,
                    grid_n,
                    input_n,
                });
            }
        }
    }
    Ok(out)
}

fn class_label(class_names: &[String], id: usize) -> String {
    class_names
        .get(id)
        .cloned()
        .unwrap_or_else(|| id.to_string())
}

/// Assigns each prediction to its best class and decodes its box.
pub fn score_predictions(raw: &[RawPrediction], class_names: &[String]) -> Result<Vec<Detection>> {
    raw.iter()
        .map(|p| {
            let objectness = geometry::sigmoid(p.objectness_logit);
            let (class_id, class_score) = p
                .class_logits
                .iter()
                .map(|&l| geometry::sigmoid(l))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, s)| {
                    if s > best.1 {
                        (i, s)
                    } else {
                        best
                    }
                });
            let class_score = class_score.max(0.0);
            Ok(Detection {
                bbox: geometry::decode_box(p, p.anchor, p.grid_n, p.input_n)?,
                class_id,
                class_name: class_label(class_names, class_id),
                objectness,
                class_score,
                confidence: objectness * class_score,
            })
        })
        .collect()
}

/// Greedy non-max suppression.
///
/// Detections scoring below the threshold are discarded. The rest are
/// visited in descending score order (earlier input wins ties); each
/// visited detection is kept unless a previously kept one overlaps it with
/// IoU at or above the IoU threshold.
pub fn nms(detections: &[Detection], config: &NmsConfig) -> Vec<Detection> {
    let score = |d: &Detection| config.score_source.of(d);
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| score(&detections[i]) >= config.objectness_threshold)
        .collect();
    order.sort_by(|&a, &b| score(&detections[b]).total_cmp(&score(&detections[a])));

    let mut kept: Vec<usize> = Vec::new();
    let mut index = SpatialIndex::new(detections, &order, config.iou_threshold, order.len() < 64);
    for &i in &order {
        let d = &detections[i];
        let suppressed = index.any_near(&d.bbox, |k| {
            let other = &detections[k];
            (!config.per_class || other.class_id == d.class_id)
                && iou(&other.bbox, &d.bbox) >= config.iou_threshold
        });
        if !suppressed {
            kept.push(i);
            index.insert(i, &d.bbox);
        }
    }
    kept.into_iter().map(|i| detections[i].clone()).collect()
}

/// Kept boxes bucketed by size level and center, so a candidate is only
/// compared against kept boxes that could reach the IoU threshold.
///
/// IoU ≥ t forces `t·w_a ≤ w_b ≤ w_a/t` and an overlap of at least
/// `t·w_a` along x (likewise for heights along y). That bounds both the size
/// levels worth visiting and how far away a matching center can be. Boxes
/// with zero area have IoU 0 with everything and are skipped. Thresholds at
/// or below zero make every pair a match, so the index then degenerates to a
/// flat list.
struct SpatialIndex {
    threshold: f64,
    flat: bool,
    all: Vec<usize>,
    origin: (f64, f64),
    min_level: i32,
    levels: Vec<Level>,
}

struct Level {
    /// Bucket side; a quarter of the largest box extent at this level.
    side: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl SpatialIndex {
    /// Finest level, as a fraction of the candidates' extent.
    const FINEST: f64 = 1.0 / 64.0;

    fn new(detections: &[Detection], order: &[usize], threshold: f64, force_flat: bool) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &i in order {
            let b = &detections[i].bbox;
            if Self::indexable(b) {
                x0 = x0.min(b.x_min);
                y0 = y0.min(b.y_min);
                x1 = x1.max(b.x_max);
                y1 = y1.max(b.y_max);
            }
        }
        let span = (x1 - x0).max(y1 - y0);
        let flat = force_flat || threshold.is_nan() || threshold <= 0.0 || !(span.is_finite() && span > 0.0);
        let mut index = Self {
            threshold,
            flat,
            all: Vec::new(),
            origin: (x0, y0),
            min_level: 0,
            levels: Vec::new(),
        };
        if !flat {
            index.min_level = Self::level(span * Self::FINEST);
            let max_level = Self::level(span) + 1;
            index.levels = (index.min_level..=max_level)
                .map(|l| {
                    let side = Self::side(l) / 4.0;
                    let cols = ((x1 - x0) / side).floor() as usize + 1;
                    let rows = ((y1 - y0) / side).floor() as usize + 1;
                    Level {
                        side,
                        cols,
                        rows,
                        buckets: vec![Vec::new(); cols * rows],
                    }
                })
                .collect();
        }
        index
    }

    fn level(extent: f64) -> i32 {
        extent.log2().floor().clamp(-1000.0, 1000.0) as i32
    }

    /// Side of a bucket at `level`; every box filed there is narrower.
    fn side(level: i32) -> f64 {
        2f64.powi(level + 1)
    }

    fn indexable(b: &BoxCorner) -> bool {
        let (w, h) = (b.width(), b.height());
        w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() && b.x_min.is_finite() && b.y_min.is_finite()
    }

    fn bucket(&self, v: f64, origin: f64, side: f64, n: usize) -> usize {
        (((v - origin) / side).floor().max(0.0) as usize).min(n - 1)
    }

    fn insert(&mut self, id: usize, b: &BoxCorner) {
        if self.flat {
            self.all.push(id);
            return;
        }
        if !Self::indexable(b) {
            return;
        }
        let level = Self::level(b.width().max(b.height())).max(self.min_level);
        let (cx, cy) = b.center();
        let l = &self.levels[(level - self.min_level) as usize];
        let bx = self.bucket(cx, self.origin.0, l.side, l.cols);
        let by = self.bucket(cy, self.origin.1, l.side, l.rows);
        let cols = l.cols;
        self.levels[(level - self.min_level) as usize].buckets[by * cols + bx].push(id);
    }

    fn any_near(&self, b: &BoxCorner, mut hit: impl FnMut(usize) -> bool) -> bool {
        if self.flat {
            return self.all.iter().any(|&k| hit(k));
        }
        if !Self::indexable(b) {
            return false;
        }
        let (w, h) = (b.width(), b.height());
        let extent = w.max(h);
        let (cx, cy) = b.center();
        let top = self.min_level + self.levels.len() as i32 - 1;
        // One extra level each way absorbs rounding at the boundaries.
        let lo = (Self::level(extent * self.threshold) - 1).max(self.min_level);
        let hi = (Self::level(extent / self.threshold) + 1).min(top);
        for level in lo..=hi {
            let l = &self.levels[(level - self.min_level) as usize];
            let slack = 1.0 + 1e-9;
            let largest = 4.0 * l.side;
            let reach_x = ((largest + w) / 2.0 - self.threshold * w).max(0.0) * slack;
            let reach_y = ((largest + h) / 2.0 - self.threshold * h).max(0.0) * slack;
            let bx0 = self.bucket(cx - reach_x, self.origin.0, l.side, l.cols);
            let bx1 = self.bucket(cx + reach_x, self.origin.0, l.side, l.cols);
            let by0 = self.bucket(cy - reach_y, self.origin.1, l.side, l.rows);
            let by1 = self.bucket(cy + reach_y, self.origin.1, l.side, l.rows);
            for by in by0..=by1 {
                for ids in &l.buckets[by * l.cols + bx0..=by * l.cols + bx1] {
                    if ids.iter().any(|&k| hit(k)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Keeps detections with confidence at or above the floor, in order.
pub fn two_stage_filter(detections: &[Detection], confidence_floor: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence >= confidence_floor)
        .cloned()
        .collect()
}

/// Input size implied by three head grids at strides 8, 16 and 32.
pub fn input_size_for_grids(grids: [usize; 3]) -> Result<usize> {
    let [g0, g1, g2] = grids;
    if g2 == 0 || g1 != 2 * g2 || g0 != 4 * g2 {
        return Err(PostprocessError::InconsistentGrids { grids });
    }
    Ok(32 * g2)
}

/// Full post-processing of one frame's three heads, finest grid first.
pub fn detect_frame(
    heads: [&Tensor; 3],
    anchors: &[[Anchor; 3]; 3],
    config: &DetectConfig,
    class_names: &[String],
) -> Result<Vec<Detection>> {
    let num_classes = class_names.len();
    for h in heads {
        if h.height() != h.width() {
            return Err(PostprocessError::NonSquareHead {
                height: h.height(),
                width: h.width(),
            });
        }
    }
    let input_n = input_size_for_grids(heads.map(|h| h.height()))?;
    let mut raw = Vec::new();
    for (scale, head) in heads.iter().enumerate() {
        raw.extend(extract_predictions(head, &anchors[scale], num_classes, input_n, scale)?);
    }
    let scored = score_predictions(&raw, class_names)?;
    let kept = nms(&scored, &config.nms);
    Ok(two_stage_filter(&kept, config.confidence_floor))
}

/// Logit written into cells that should fire.
pub const HOT_LOGIT: f64 = 16.0;

/// Builds the three head tensors a perfect network would emit for the
/// given ground truth (class id, box in input pixels).
///
/// Each box goes to the anchor with the best centered-shape IoU, in the
/// cell containing its center. Every other slot is cold.
pub fn encode_targets(
    truths: &[(usize, BoxCorner)],
    anchors: &[[Anchor; 3]; 3],
    num_classes: usize,
    input_n: usize,
) -> Result<[Tensor; 3]> {
    let channels = head_channels(num_classes)?;
    let grids = crate::netdef::grid_sizes(input_n)?;
    let slot_len = 5 + num_classes;
    let mut heads = grids.map(|g| {
        let mut t = Tensor::zeros(g, g, channels);
        for r in 0..g {
            for c in 0..g {
                for slot in 0..3 {
                    for k in 4..slot_len {
                        t.set(r, c, slot * slot_len + k, -HOT_LOGIT);
                    }
                }
            }
        }
        t
    });
    let mut used = std::collections::HashSet::new();

    for (index, &(class_id, b)) in truths.iter().enumerate() {
        let (w, h) = (b.width(), b.height());
        let (scale, slot) = (0..9)
            .map(|k| (k / 3, k % 3))
            .fold(((0, 0), f64::NEG_INFINITY), |best, (s, a)| {
                let anchor = anchors[s][a];
                let inter = w.min(anchor.w) * h.min(anchor.h);
                let score = inter / (w * h + anchor.w * anchor.h - inter);
                if score > best.1 {
                    ((s, a), score)
                } else {
                    best
                }
            })
            .0;
        let grid = grids[scale];
        let stride = input_n as f64 / grid as f64;
        let (cx, cy) = b.center();
        let cell = geometry::responsible_cell(
            &geometry::BoxNorm::new(cx / input_n as f64, cy / input_n as f64, 1.0, 1.0),
            grid,
        );
        if !used.insert((scale, cell, slot)) {
            return Err(PostprocessError::TargetCollision {
                index,
                scale,
                cell,
                slot,
            });
        }
        let logit = |frac: f64| {
            let p = frac.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        };
        let anchor = anchors[scale][slot];
        let base = slot * slot_len;
        let t = &mut heads[scale];
        let (row, col) = cell;
        t.set(row, col, base, logit(cx / stride - col as f64));
        t.set(row, col, base + 1, logit(cy / stride - row as f64));
        t.set(row, col, base + 2, (w / anchor.w).ln());
        t.set(row, col, base + 3, (h / anchor.h).ln());
        t.set(row, col, base + 4, HOT_LOGIT);
        for k in 0..num_classes {
            let v = if k == class_id { HOT_LOGIT } else { -HOT_LOGIT };
            t.set(row, col, base + 5 + k, v);
        }
    }
    Ok(heads)
}

/// One `class_name confidence x_min y_min x_max y_max` line per detection.
pub fn format_detection_lines(detections: &[Detection]) -> String {
    let mut out = String::new();
    for d in detections {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            d.class_name, d.confidence, d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max
        ));
    }
    out
}

/// A detection read back from the line format.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLine {
    pub class_name: String,
    pub confidence: f64,
    pub bbox: BoxCorner,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct DetectionLineError {
    pub line: usize,
    pub message: String,
}

pub fn parse_detection_lines(text: &str) -> Result<Vec<DetectionLine>, DetectionLineError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| DetectionLineError { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| err(format!("non-numeric field in `{line}`")))?;
        if !(0.0..=1.0).contains(&nums[0]) {
            return Err(err(format!("confidence {} outside [0, 1]", nums[0])));
        }
        let bbox = BoxCorner::new(nums[1], nums[2], nums[3], nums[4]);
        if !bbox.is_valid() {
            return Err(err("inverted corners".into()));
        }
        out.push(DetectionLine {
            class_name: fields[0].to_string(),
            confidence: nums[0],
            bbox,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::YOLOV4_ANCHORS;

    fn det(b: (f64, f64, f64, f64), conf: f64, class_id: usize) -> Detection {
        Detection {
            bbox: BoxCorner::new(b.0, b.1, b.2, b.3),
            class_id,
            class_name: format!("c{class_id}"),
            objectness: conf,
            class_score: 1.0,
            confidence: conf,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn extract_counts_and_layout() {
        let head = Tensor::zeros(13, 13, 54);
        let raw = extract_predictions(&head, &YOLOV4_ANCHORS[2], 13, 416, 2).unwrap();
        assert_eq!(raw.len(), 507);

        let values: Vec<f64> = (0..18).map(f64::from).collect();
        let head = Tensor::new(1, 1, 18, values).unwrap();
        let raw = extract_predictions(&head, &YOLOV4_ANCHORS[0], 1, 32, 0).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!((raw[1].t_x, raw[1].t_h, raw[1].objectness_logit), (6.0, 9.0, 10.0));
        assert_eq!(raw[2].class_logits, vec![17.0]);
        assert_eq!(raw[2].anchor, YOLOV4_ANCHORS[0][2]);

        let bad = Tensor::zeros(13, 13, 55);
        assert_eq!(
            extract_predictions(&bad, &YOLOV4_ANCHORS[2], 13, 416, 2),
            Err(PostprocessError::HeadChannels { expected: 54, found: 55, classes: 13 })
        );
    }

    #[test]
    fn scoring_ties_and_argmax() {
        let head = Tensor::zeros(1, 1, head_channels(2).unwrap());
        let raw = extract_predictions(&head, &YOLOV4_ANCHORS[0], 2, 32, 0).unwrap();
        let d = &score_predictions(&raw, &names(2)).unwrap()[0];
        assert_eq!((d.class_id, d.objectness, d.confidence), (0, 0.5, 0.25));

        let mut r = raw[0].clone();
        r.class_logits = vec![1.0, 3.0, 2.0];
        let d = &score_predictions(&[r], &names(3)).unwrap()[0];
        assert_eq!(d.class_id, 1);
        assert_eq!(d.class_name, "c1");
        assert!(d.confidence <= d.objectness);
    }

    #[test]
    fn nms_worked_example() {
        let b1 = det((0.0, 0.0, 10.0, 10.0), 0.9, 0);
        let b2 = det((1.0, 1.0, 11.0, 11.0), 0.8, 0);
        let b3 = det((20.0, 20.0, 30.0, 30.0), 0.7, 0);
        assert!((iou(&b1.bbox, &b2.bbox) - 81.0 / 119.0).abs() < 1e-15);
        let cfg = NmsConfig { objectness_threshold: 0.5, iou_threshold: 0.5, ..Default::default() };
        let out = nms(&[b2.clone(), b3.clone(), b1.clone()], &cfg);
        assert_eq!(out, vec![b1, b3]);
    }

    #[test]
    fn nms_trivial_cases() {
        let cfg = NmsConfig::default();
        assert!(nms(&[], &cfg).is_empty());
        let one = det((0.0, 0.0, 5.0, 5.0), 0.3, 0);
        assert_eq!(nms(std::slice::from_ref(&one), &cfg), vec![one.clone()]);
        let low = det((0.0, 0.0, 5.0, 5.0), 0.2, 0);
        assert!(nms(&[low], &cfg).is_empty());
    }

    #[test]
    fn nms_per_class_keeps_overlapping_other_class() {
        let a = det((0.0, 0.0, 10.0, 10.0), 0.9, 0);
        let b = det((0.0, 0.0, 10.0, 10.0), 0.8, 1);
        let agnostic = NmsConfig::default();
        assert_eq!(nms(&[a.clone(), b.clone()], &agnostic).len(), 1);
        let per_class = NmsConfig { per_class: true, ..agnostic };
        assert_eq!(nms(&[a, b], &per_class).len(), 2);
    }

    #[test]
    fn nms_ties_favour_earlier_input() {
        let a = det((0.0, 0.0, 10.0, 10.0), 0.6, 0);
        let b = det((0.0, 0.0, 10.0, 10.0), 0.6, 1);
        let out = nms(&[b.clone(), a.clone()], &NmsConfig::default());
        assert_eq!(out, vec![b]);
    }

    #[test]
    fn nms_objectness_mode() {
        let mut a = det((0.0, 0.0, 10.0, 10.0), 0.2, 0);
        a.objectness = 0.9;
        let cfg = NmsConfig { score_source: ScoreSource::Objectness, ..Default::default() };
        assert_eq!(nms(std::slice::from_ref(&a), &cfg), vec![a.clone()]);
        assert!(nms(&[a], &NmsConfig::default()).is_empty());
    }

    #[test]
    fn two_stage_filter_cases() {
        let ds = vec![
            det((0.0, 0.0, 1.0, 1.0), 0.7, 0),
            det((0.0, 0.0, 1.0, 1.0), 0.3, 0),
            det((0.0, 0.0, 1.0, 1.0), 0.5, 0),
            det((0.0, 0.0, 1.0, 1.0), 0.99, 0),
        ];
        assert_eq!(two_stage_filter(&ds, 0.0), ds);
        assert!(two_stage_filter(&ds[3..], 1.0).is_empty());
        let kept = two_stage_filter(&ds, 0.5);
        assert_eq!(kept, vec![ds[0].clone(), ds[2].clone(), ds[3].clone()]);
        assert_eq!(two_stage_filter(&kept, 0.5), kept);
    }

    #[test]
    fn zero_heads_produce_nothing() {
        let c = head_channels(2).unwrap();
        let heads = [Tensor::zeros(52, 52, c), Tensor::zeros(26, 26, c), Tensor::zeros(13, 13, c)];
        let cfg = DetectConfig { nms: NmsConfig { objectness_threshold: 0.5, ..Default::default() }, ..Default::default() };
        let out = detect_frame([&heads[0], &heads[1], &heads[2]], &YOLOV4_ANCHORS, &cfg, &names(2)).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn inconsistent_grids_rejected() {
        let c = head_channels(1).unwrap();
        let heads = [Tensor::zeros(52, 52, c), Tensor::zeros(26, 26, c), Tensor::zeros(12, 12, c)];
        let err = detect_frame([&heads[0], &heads[1], &heads[2]], &YOLOV4_ANCHORS, &DetectConfig::default(), &names(1));
        assert!(matches!(err, Err(PostprocessError::InconsistentGrids { .. })));
    }

    #[test]
    fn single_hot_cell_is_detected_where_decoded() {
        let c = head_channels(3).unwrap();
        let mut heads = [Tensor::zeros(52, 52, c), Tensor::filled(26, 26, c, -10.0), Tensor::zeros(13, 13, c)];
        for h in heads.iter_mut() {
            let (g, _, _) = h.shape();
            for r in 0..g {
                for col in 0..g {
                    for slot in 0..3 {
                        h.set(r, col, slot * 8 + 4, -10.0);
                    }
                }
            }
        }
        let slot = 1;
        let (row, col) = (7, 11);
        let t = (0.3, -0.4, 0.2, -0.1);
        heads[1].set(row, col, slot * 8, t.0);
        heads[1].set(row, col, slot * 8 + 1, t.1);
        heads[1].set(row, col, slot * 8 + 2, t.2);
        heads[1].set(row, col, slot * 8 + 3, t.3);
        heads[1].set(row, col, slot * 8 + 4, 12.0);
        heads[1].set(row, col, slot * 8 + 5 + 2, 12.0);
        let out = detect_frame([&heads[0], &heads[1], &heads[2]], &YOLOV4_ANCHORS, &DetectConfig::default(), &names(3)).unwrap();
        assert_eq!(out.len(), 1);
        let d = &out[0];
        assert_eq!(d.class_id, 2);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let a = YOLOV4_ANCHORS[1][slot];
        let (cx, cy) = ((sig(t.0) + col as f64) * 16.0, (sig(t.1) + row as f64) * 16.0);
        let (w, h) = (a.w * t.2.exp(), a.h * t.3.exp());
        assert!((d.bbox.x_min - (cx - w / 2.0)).abs() < 1e-9);
        assert!((d.bbox.y_max - (cy + h / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn encoded_targets_decode_back() {
        let truths = vec![
            (0, BoxCorner::new(100.0, 120.0, 160.0, 200.0)),
            (2, BoxCorner::new(300.0, 40.0, 340.0, 70.0)),
            (1, BoxCorner::new(10.0, 300.0, 400.0, 410.0)),
        ];
        let heads = encode_targets(&truths, &YOLOV4_ANCHORS, 3, 416).unwrap();
        let out = detect_frame([&heads[0], &heads[1], &heads[2]], &YOLOV4_ANCHORS, &DetectConfig::default(), &names(3)).unwrap();
        assert_eq!(out.len(), 3);
        for (class_id, b) in &truths {
            let d = out.iter().find(|d| d.class_id == *class_id).unwrap();
            assert!(iou(&d.bbox, b) > 0.9999, "{:?} vs {:?}", d.bbox, b);
        }
        let clash = vec![truths[0], truths[0]];
        assert!(matches!(
            encode_targets(&clash, &YOLOV4_ANCHORS, 3, 416),
            Err(PostprocessError::TargetCollision { index: 1, .. })
        ));
    }

    #[test]
    fn detection_lines_round_trip() {
        let ds = vec![det((1.5, 2.25, 10.0, 20.125), 0.875, 3)];
        let text = format_detection_lines(&ds);
        assert_eq!(text, "c3 0.875000 1.500000 2.250000 10.000000 20.125000\n");
        let back = parse_detection_lines(&text).unwrap();
        assert_eq!(back[0].bbox, ds[0].bbox);
        assert_eq!(format!("{:.6}", back[0].confidence), "0.875000");
        assert!(parse_detection_lines("c0 0.5 1 2 3\n").is_err());
        assert!(parse_detection_lines("c0 1.5 1 2 3 4\n").is_err());
    }
}
