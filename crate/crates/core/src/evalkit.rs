//! COCO-style detection scoring: greedy matching, 101-point interpolated AP
//! and mAP over IoU thresholds 0.50 to 0.95.
//!
//! Detections that share a confidence value are ranked as one group: the
//! precision-recall curve only gets a point once the whole group has been
//! counted. No confidence threshold can separate tied detections, and this
//! makes every score independent of the order in which images are listed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::synth::Scenario;
use crate::geometry::{iou, BoxCorner};
use crate::postprocess::Detection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("ground-truth set is empty")]
    EmptyGroundTruth,
    #[error("unknown scenario `{0}`; expected single-class, multi-class-group or all-classes")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruth {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: BoxCorner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalDetection {
    pub class_id: usize,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BoxCorner,
}

impl From<&Detection> for EvalDetection {
    fn from(d: &Detection) -> Self {
        Self {
            class_id: d.class_id,
            confidence: d.confidence,
            bbox: d.bbox,
        }
    }
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<EvalDetection>,
    pub truths: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMatch {
    /// Index into the detection list given to [`match_detections`].
    pub detection: usize,
    pub gt: Option<usize>,
    /// IoU with the matched ground truth, 0 when unmatched.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One entry per detection, in ranking order.
    pub detections: Vec<DetectionMatch>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn false_positives(&self) -> usize {
        self.detections.iter().filter(|m| m.gt.is_none()).count()
    }

    pub fn missed(&self) -> usize {
        self.gt_matched.iter().filter(|&&m| !m).count()
    }
}

/// Detections in descending confidence order, ties by original index.
fn ranking(dets: &[EvalDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy matching: in ranking order each detection takes the unmatched
/// same-class ground truth with the highest IoU, provided it reaches
/// `iou_threshold`. IoU ties go to the lower ground-truth index.
pub fn match_detections(dets: &[EvalDetection], gts: &[GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut gt_matched = vec![false; gts.len()];
    let detections = ranking(dets)
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if gt_matched[g] || gt.class_id != dets[d].class_id {
                    continue;
                }
                let v = iou(&dets[d].bbox, &gt.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                gt_matched[g] = true;
            }
            DetectionMatch {
                detection: d,
                gt: best.map(|(g, _)| g),
                iou: best.map_or(0.0, |(_, v)| v),
            }
        })
        .collect();
    MatchResult { detections, gt_matched }
}

/// The ten thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// 101-point interpolated AP from ranked `(confidence, is_tp)` records.
///
/// Returns 0 when `num_gt` is 0.
pub fn ap_from_records(records: &mut [(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    records.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    for (i, &(conf, is_tp)) in records.iter().enumerate() {
        seen += 1;
        tp += usize::from(is_tp);
        let group_ends = records.get(i + 1).is_none_or(|next| next.0 != conf);
        if group_ends {
            recall.push(tp as f64 / num_gt as f64);
            precision.push(tp as f64 / seen as f64);
        }
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let total: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            let at = recall.partition_point(|&x| x < r);
            precision.get(at).copied().unwrap_or(0.0)
        })
        .sum();
    total / 101.0
}

fn class_records(images: &[ImageEval], matches: &[MatchResult], class_id: usize) -> (Vec<(f64, bool)>, usize) {
    let mut records = Vec::new();
    let mut num_gt = 0;
    for (img, m) in images.iter().zip(matches) {
        num_gt += img.truths.iter().filter(|g| g.class_id == class_id).count();
        for dm in &m.detections {
            let d = &img.detections[dm.detection];
            if d.class_id == class_id {
                records.push((d.confidence, dm.gt.is_some()));
            }
        }
    }
    (records, num_gt)
}

fn match_all(images: &[ImageEval], iou_threshold: f64) -> Vec<MatchResult> {
    images
        .par_iter()
        .map(|img| match_detections(&img.detections, &img.truths, iou_threshold))
        .collect()
}

/// AP of one class at one IoU threshold over a whole dataset.
pub fn average_precision(images: &[ImageEval], class_id: usize, iou_threshold: f64) -> f64 {
    let matches = match_all(images, iou_threshold);
    let (mut records, num_gt) = class_records(images, &matches, class_id);
    ap_from_records(&mut records, num_gt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub images: usize,
    /// Class name → threshold (two decimals) → AP, for classes present in
    /// the ground truth.
    pub per_class_ap: BTreeMap<String, BTreeMap<String, f64>>,
    pub map_50_95: f64,
    pub map_50: f64,
    /// Images with a missed ground truth or a false positive at IoU 0.5.
    pub failed_images: usize,
    pub error_rate: f64,
    /// Confidences of detections matched at IoU 0.5.
    pub confidence_stats: Option<ConfidenceStats>,
}

fn class_label(class_names: &[String], id: usize) -> String {
    class_names.get(id).cloned().unwrap_or_else(|| format!("class_{id}"))
}

/// Per-class AP at all ten thresholds, their means, and the per-image error
/// rate. Classes with no ground truth are left out of the means.
pub fn map_50_95(images: &[ImageEval], class_names: &[String]) -> Result<EvalReport, EvalError> {
    let mut classes: Vec<usize> = images.iter().flat_map(|i| i.truths.iter().map(|g| g.class_id)).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }

    let thresholds = iou_thresholds();
    let mut per_class_ap: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut threshold_means = Vec::with_capacity(thresholds.len());
    let mut at_50 = Vec::new();
    for (ti, &t) in thresholds.iter().enumerate() {
        let matches = match_all(images, t);
        let mut sum = 0.0;
        for &c in &classes {
            let (mut records, num_gt) = class_records(images, &matches, c);
            let ap = ap_from_records(&mut records, num_gt);
            sum += ap;
            per_class_ap
                .entry(class_label(class_names, c))
                .or_default()
                .insert(format!("{t:.2}"), ap);
        }
        threshold_means.push(sum / classes.len() as f64);
        if ti == 0 {
            at_50 = matches;
        }
    }

    let failed_images = at_50.iter().filter(|m| m.missed() > 0 || m.false_positives() > 0).count();
    let matched: Vec<f64> = images
        .iter()
        .zip(&at_50)
        .flat_map(|(img, m)| {
            m.detections
                .iter()
                .filter(|dm| dm.gt.is_some())
                .map(|dm| img.detections[dm.detection].confidence)
        })
        .collect();
    let confidence_stats = (!matched.is_empty()).then(|| ConfidenceStats {
        count: matched.len(),
        min: matched.iter().copied().fold(f64::INFINITY, f64::min),
        max: matched.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: matched.iter().sum::<f64>() / matched.len() as f64,
    });

    Ok(EvalReport {
        scenario: None,
        images: images.len(),
        per_class_ap,
        map_50_95: threshold_means.iter().sum::<f64>() / threshold_means.len() as f64,
        map_50: threshold_means[0],
        failed_images,
        error_rate: failed_images as f64 / images.len() as f64,
        confidence_stats,
    })
}

/// [`map_50_95`] labelled with a scenario tag.
pub fn scenario_report(scenario: &str, images: &[ImageEval], class_names: &[String]) -> Result<EvalReport, EvalError> {
    let parsed: Scenario = scenario
        .parse()
        .map_err(|_| EvalError::UnknownScenario(scenario.to_string()))?;
    let mut report = map_50_95(images, class_names)?;
    report.scenario = Some(parsed.tag().to_string());
    Ok(report)
}

impl EvalReport {
    /// Fixed-width text table: one row per class, then the summary.
    pub fn table(&self) -> String {
        let width = self.per_class_ap.keys().map(String::len).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>8}  {:>8}\n", "class", "AP50", "AP50:95");
        for (name, by_t) in &self.per_class_ap {
            let mean = by_t.values().sum::<f64>() / by_t.len() as f64;
            let ap50 = by_t.get("0.50").copied().unwrap_or(0.0);
            out.push_str(&format!("{name:<width$}  {ap50:>8.4}  {mean:>8.4}\n"));
        }
        out.push_str(&format!("{:<width$}  {:>8.4}  {:>8.4}\n", "all", self.map_50, self.map_50_95));
        if let Some(s) = &self.scenario {
            out.push_str(&format!("scenario: {s}\n"));
        }
        out.push_str(&format!(
            "failed images: {} of {} (error rate {:.4})\n",
            self.failed_images, self.images, self.error_rate
        ));
        if let Some(c) = &self.confidence_stats {
            out.push_str(&format!(
                "matched confidence: min {:.4} max {:.4} mean {:.4} over {}\n",
                c.min, c.max, c.mean, c.count
            ));
        }
        out
    }
}
