//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use yolokit::dataset::FlipAxis;
use yolokit::geometry::{Anchor, YOLOV4_ANCHORS};
use yolokit::postprocess::{DetectConfig, NmsConfig, ScoreSource};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_n: usize,
    /// `classes.txt`; the built-in thirteen component names when unset.
    pub classes: Option<PathBuf>,
    pub anchors: [[Anchor; 3]; 3],
    pub objectness_threshold: f64,
    pub iou_threshold: f64,
    pub confidence_floor: f64,
    pub score_source: ScoreSource,
    pub per_class_nms: bool,
    pub rotations: Vec<f64>,
    pub flips: Vec<FlipAxis>,
    pub class_floor: usize,
    pub min_visible: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input_n: 608,
            classes: None,
            anchors: YOLOV4_ANCHORS,
            objectness_threshold: 0.25,
            iou_threshold: 0.45,
            confidence_floor: 0.5,
            score_source: ScoreSource::Confidence,
            per_class_nms: false,
            rotations: (0..12).map(|k| 30.0 * k as f64).collect(),
            flips: vec![FlipAxis::Horizontal, FlipAxis::Vertical],
            class_floor: 300,
            min_visible: 0.2,
            seed: 0,
        }
    }
}

pub fn parse_anchors(text: &str) -> Result<[[Anchor; 3]; 3]> {
    let pairs: Vec<Anchor> = text
        .split_whitespace()
        .map(|pair| {
            let (w, h) = pair
                .split_once(',')
                .with_context(|| format!("anchor `{pair}` is not `w,h`"))?;
            let (w, h): (f64, f64) = (w.parse()?, h.parse()?);
            if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
                bail!("anchor `{pair}` must be positive");
            }
            Ok(Anchor::new(w, h))
        })
        .collect::<Result<_>>()?;
    if pairs.len() != 9 {
        bail!("expected 9 anchors, found {}", pairs.len());
    }
    Ok(std::array::from_fn(|s| std::array::from_fn(|a| pairs[3 * s + a])))
}

pub fn parse_rotations(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v: f64 = t.parse().with_context(|| format!("rotation `{t}` is not a number"))?;
            if !v.is_finite() {
                bail!("rotation `{t}` is not finite");
            }
            Ok(v)
        })
        .collect()
}

pub fn parse_flips(text: &str) -> Result<Vec<FlipAxis>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty() && *t != "none")
        .map(|t| FlipAxis::from_tag(t).with_context(|| format!("flip axis `{t}` is not h or v")))
        .collect()
}

fn unit(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().with_context(|| format!("{key}: `{v}` is not a number"))?;
    if !(0.0..=1.0).contains(&x) {
        bail!("{key} = {x} is outside [0, 1]");
    }
    Ok(x)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {}: expected key = value", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            c.set(key, value).with_context(|| format!("config line {}", i + 1))?;
        }
        Ok(c)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input_n" => {
                let n: usize = value.parse().with_context(|| format!("input_n `{value}`"))?;
                if n == 0 || !n.is_multiple_of(32) {
                    bail!("input_n {n} must be a positive multiple of 32");
                }
                self.input_n = n;
            }
            "classes" => self.classes = (!value.is_empty()).then(|| PathBuf::from(value)),
            "anchors" => self.anchors = parse_anchors(value)?,
            "objectness_threshold" => self.objectness_threshold = unit(key, value)?,
            "iou_threshold" => self.iou_threshold = unit(key, value)?,
            "confidence_floor" => self.confidence_floor = unit(key, value)?,
            "score_source" => {
                self.score_source = match value {
                    "confidence" => ScoreSource::Confidence,
                    "objectness" => ScoreSource::Objectness,
                    other => bail!("score_source `{other}` is not confidence or objectness"),
                }
            }
            "per_class_nms" => self.per_class_nms = value.parse().with_context(|| format!("per_class_nms `{value}`"))?,
            "rotations" => self.rotations = parse_rotations(value)?,
            "flips" => self.flips = parse_flips(value)?,
            "class_floor" => self.class_floor = value.parse().with_context(|| format!("class_floor `{value}`"))?,
            "min_visible" => self.min_visible = unit(key, value)?,
            "seed" => self.seed = value.parse().with_context(|| format!("seed `{value}`"))?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "input_n = {}", self.input_n);
        let _ = writeln!(
            out,
            "classes = {}",
            self.classes.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        );
        let anchors: Vec<String> = self.anchors.iter().flatten().map(|a| format!("{},{}", a.w, a.h)).collect();
        let _ = writeln!(out, "anchors = {}", anchors.join(" "));
        let _ = writeln!(out, "objectness_threshold = {}", self.objectness_threshold);
        let _ = writeln!(out, "iou_threshold = {}", self.iou_threshold);
        let _ = writeln!(out, "confidence_floor = {}", self.confidence_floor);
        let source = match self.score_source {
            ScoreSource::Confidence => "confidence",
            ScoreSource::Objectness => "objectness",
        };
        let _ = writeln!(out, "score_source = {source}");
        let _ = writeln!(out, "per_class_nms = {}", self.per_class_nms);
        let rotations: Vec<String> = self.rotations.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "rotations = {}", rotations.join(","));
        let flips: Vec<String> = self.flips.iter().map(|f| f.tag().to_string()).collect();
        let _ = writeln!(out, "flips = {}", flips.join(","));
        let _ = writeln!(out, "class_floor = {}", self.class_floor);
        let _ = writeln!(out, "min_visible = {}", self.min_visible);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            nms: NmsConfig {
                objectness_threshold: self.objectness_threshold,
                iou_threshold: self.iou_threshold,
                score_source: self.score_source,
                per_class: self.per_class_nms,
            },
            confidence_floor: self.confidence_floor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let c = RunConfig {
            input_n: 416,
            classes: Some("data/classes.txt".into()),
            rotations: vec![0.0, 22.5],
            flips: vec![FlipAxis::Vertical],
            score_source: ScoreSource::Objectness,
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&c.dump()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.dump(), c.dump());
        assert_eq!(RunConfig::parse(&RunConfig::default().dump()).unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("input_n = 415").is_err());
        assert!(RunConfig::parse("iou_threshold = 1.5").is_err());
        assert!(RunConfig::parse("anchors = 1,2 3,4").is_err());
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert_eq!(RunConfig::parse("# comment\n\nseed = 9\n").unwrap().seed, 9);
    }
}
