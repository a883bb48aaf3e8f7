//! Text label formats: YOLO (`class cx cy w h`, normalized), LabelImg
//! corner export (`name x_min y_min x_max y_max`, pixels) and the
//! aggregate CSV.

use thiserror::Error;

use super::{ClassRegistry, Label, LabeledImage};
use crate::geometry::{corner_to_norm, norm_to_corner, BoxCorner, BoxNorm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: `{token}` is not a number")]
    NotANumber { line: usize, token: String },
    #[error("line {line}: class id {class_id} outside registry of {classes} classes")]
    ClassOutOfRange {
        line: usize,
        class_id: usize,
        classes: usize,
    },
    #[error("line {line}: {field} = {value} outside its valid range")]
    CoordinateRange {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("line {line}: inverted corners ({x_min}, {y_min}) .. ({x_max}, {y_max})")]
    InvertedCorners {
        line: usize,
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("line {line}: box extends beyond the {width}x{height} image")]
    OutsideImage { line: usize, width: f64, height: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

fn number(line: usize, token: &str) -> Result<f64, LabelError> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| LabelError::NotANumber {
            line,
            token: token.to_string(),
        })
}

pub fn read_yolo_labels(text: &str, registry: &ClassRegistry) -> Result<Vec<Label>, LabelError> {
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(LabelError::FieldCount {
                line,
                expected: 5,
                found: fields.len(),
            });
        }
        let class_id: usize = fields[0].parse().map_err(|_| LabelError::NotANumber {
            line,
            token: fields[0].to_string(),
        })?;
        if class_id >= registry.len() {
            return Err(LabelError::ClassOutOfRange {
                line,
                class_id,
                classes: registry.len(),
            });
        }
        let mut v = [0.0; 4];
        for (k, (slot, field)) in v.iter_mut().zip(["cx", "cy", "w", "h"]).enumerate() {
            let value = number(line, fields[k + 1])?;
            let ok = if k < 2 {
                (0.0..=1.0).contains(&value)
            } else {
                value > 0.0 && value <= 1.0
            };
            if !ok {
                return Err(LabelError::CoordinateRange { line, field, value });
            }
            *slot = value;
        }
        labels.push(Label::new(class_id, BoxNorm::new(v[0], v[1], v[2], v[3])));
    }
    Ok(labels)
}

pub fn write_yolo_labels(labels: &[Label]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            l.class_id, l.bbox.cx, l.bbox.cy, l.bbox.w, l.bbox.h
        ));
    }
    out
}

/// Slack, in pixels, allowed outside the image before a corner box is
/// rejected. Boxes within the slack are clamped.
const EDGE_TOLERANCE: f64 = 1.0;

pub fn read_labelimg_corners(
    text: &str,
    image_dims: (usize, usize),
) -> Result<Vec<(String, BoxCorner)>, LabelError> {
    let (w, h) = (image_dims.0 as f64, image_dims.1 as f64);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(LabelError::FieldCount {
                line,
                expected: 5,
                found: fields.len(),
            });
        }
        let c: Vec<f64> = fields[1..]
            .iter()
            .map(|t| number(line, t))
            .collect::<Result<_, _>>()?;
        let (x_min, y_min, x_max, y_max) = (c[0], c[1], c[2], c[3]);
        if x_min > x_max || y_min > y_max {
            return Err(LabelError::InvertedCorners {
                line,
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        let outside = x_min < -EDGE_TOLERANCE
            || y_min < -EDGE_TOLERANCE
            || x_max > w + EDGE_TOLERANCE
            || y_max > h + EDGE_TOLERANCE;
        if outside {
            return Err(LabelError::OutsideImage {
                line,
                width: w,
                height: h,
            });
        }
        out.push((
            fields[0].to_string(),
            BoxCorner::new(x_min, y_min, x_max, y_max).clamp(w, h),
        ));
    }
    Ok(out)
}

pub fn write_labelimg_corners(boxes: &[(String, BoxCorner)]) -> String {
    let mut out = String::new();
    for (name, b) in boxes {
        out.push_str(&format!("{name} {} {} {} {}\n", b.x_min, b.y_min, b.x_max, b.y_max));
    }
    out
}

/// One aggregate CSV row, coordinates in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub filename: String,
    pub width: usize,
    pub height: usize,
    pub class: String,
    pub bbox: BoxCorner,
}

const CSV_HEADER: [&str; 8] = ["filename", "width", "height", "class", "x_min", "y_min", "x_max", "y_max"];

/// Rows for every label, ordered by file name then label order.
pub fn aggregate_rows(dataset: &[LabeledImage], registry: &ClassRegistry) -> Vec<CsvRow> {
    let mut samples: Vec<&LabeledImage> = dataset.iter().collect();
    samples.sort_by(|a, b| a.source_path.cmp(&b.source_path));
    let mut rows = Vec::new();
    for s in samples {
        let (w, h) = (s.image.width(), s.image.height());
        for l in &s.labels {
            let bbox = norm_to_corner(&l.bbox, w as f64, h as f64).expect("image dims are positive");
            rows.push(CsvRow {
                filename: s.source_path.clone(),
                width: w,
                height: h,
                class: registry
                    .name(l.class_id)
                    .map_or_else(|| l.class_id.to_string(), str::to_string),
                bbox,
            });
        }
    }
    rows
}

pub fn aggregate_csv(dataset: &[LabeledImage], registry: &ClassRegistry) -> String {
    write_csv(&aggregate_rows(dataset, registry))
}

/// Coordinates use the shortest representation that parses back to the
/// same `f64`, so parse → write is lossless.
pub fn write_csv(rows: &[CsvRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.filename.clone(),
            r.width.to_string(),
            r.height.to_string(),
            r.class.clone(),
            r.bbox.x_min.to_string(),
            r.bbox.y_min.to_string(),
            r.bbox.x_max.to_string(),
            r.bbox.y_max.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, LabelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| LabelError::Csv(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(LabelError::Csv(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let rec = record.map_err(|e| LabelError::Csv(e.to_string()))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(LabelError::FieldCount {
                line,
                expected: CSV_HEADER.len(),
                found: rec.len(),
            });
        }
        let dim = |k: usize| -> Result<usize, LabelError> {
            rec[k].parse().map_err(|_| LabelError::NotANumber {
                line,
                token: rec[k].to_string(),
            })
        };
        let bbox = BoxCorner::new(
            number(line, &rec[4])?,
            number(line, &rec[5])?,
            number(line, &rec[6])?,
            number(line, &rec[7])?,
        );
        rows.push(CsvRow {
            filename: rec[0].to_string(),
            width: dim(1)?,
            height: dim(2)?,
            class: rec[3].to_string(),
            bbox,
        });
    }
    Ok(rows)
}

/// Converts corner labels to normalized YOLO labels through the registry.
pub fn corners_to_labels(
    boxes: &[(String, BoxCorner)],
    image_dims: (usize, usize),
    registry: &ClassRegistry,
) -> Result<Vec<Label>, String> {
    boxes
        .iter()
        .map(|(name, b)| {
            let id = registry
                .id_of(name)
                .ok_or_else(|| format!("class `{name}` is not in the registry"))?;
            let n = corner_to_norm(b, image_dims.0 as f64, image_dims.1 as f64).map_err(|e| e.to_string())?;
            if !(n.w > 0.0 && n.h > 0.0) {
                return Err(format!("`{name}` box has zero area"));
            }
            Ok(Label::new(id, n))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Image;

    fn registry13() -> ClassRegistry {
        ClassRegistry::components()
    }

    #[test]
    fn yolo_examples() {
        let r = registry13();
        let l = read_yolo_labels("0 0.5 0.5 1 1", &r).unwrap();
        assert_eq!(l, vec![Label::new(0, BoxNorm::new(0.5, 0.5, 1.0, 1.0))]);

        let l = read_yolo_labels("12 0.25 0.75 0.1 0.2\n", &r).unwrap();
        assert_eq!(l[0].class_id, 12);
        for (got, want) in [(l[0].bbox.cx, 0.25), (l[0].bbox.cy, 0.75), (l[0].bbox.w, 0.1), (l[0].bbox.h, 0.2)] {
            assert!((got - want).abs() < 1e-9);
        }

        assert_eq!(
            read_yolo_labels("13 0.5 0.5 0.1 0.1", &r),
            Err(LabelError::ClassOutOfRange { line: 1, class_id: 13, classes: 13 })
        );
        assert!(matches!(
            read_yolo_labels("0 0.5 0.5 0.1 0.1\n1 1.5 0.5 0.1 0.1", &r),
            Err(LabelError::CoordinateRange { line: 2, field: "cx", .. })
        ));
        assert!(matches!(
            read_yolo_labels("0 0.5 0.5 0.1", &r),
            Err(LabelError::FieldCount { line: 1, expected: 5, found: 4 })
        ));
        assert!(matches!(read_yolo_labels("0 0.5 0.5 0 0.1", &r), Err(LabelError::CoordinateRange { field: "w", .. })));
    }

    #[test]
    fn yolo_writer_format() {
        let text = write_yolo_labels(&[Label::new(3, BoxNorm::new(0.5, 0.25, 0.125, 1.0))]);
        assert_eq!(text, "3 0.500000 0.250000 0.125000 1.000000\n");
    }

    #[test]
    fn labelimg_examples() {
        let boxes = read_labelimg_corners("gear 10 10 50 50", (100, 100)).unwrap();
        assert_eq!(boxes, vec![("gear".to_string(), BoxCorner::new(10.0, 10.0, 50.0, 50.0))]);
        let labels = corners_to_labels(&boxes, (100, 100), &registry13()).unwrap();
        let b = labels[0].bbox;
        for (got, want) in [(b.cx, 0.3), (b.cy, 0.3), (b.w, 0.4), (b.h, 0.4)] {
            assert!((got - want).abs() < 1e-9);
        }
        assert!(matches!(
            read_labelimg_corners("gear 50 50 10 10", (100, 100)),
            Err(LabelError::InvertedCorners { line: 1, .. })
        ));
        assert!(read_labelimg_corners("", (100, 100)).unwrap().is_empty());
        let edge = read_labelimg_corners("gear -0.5 0 100.8 10", (100, 100)).unwrap();
        assert_eq!(edge[0].1, BoxCorner::new(0.0, 0.0, 100.0, 10.0));
        assert!(matches!(
            read_labelimg_corners("gear 0 0 102 10", (100, 100)),
            Err(LabelError::OutsideImage { .. })
        ));
        assert!(corners_to_labels(&[("sprocket".into(), BoxCorner::new(0.0, 0.0, 1.0, 1.0))], (10, 10), &registry13()).is_err());
    }

    fn sample(path: &str, labels: Vec<Label>) -> LabeledImage {
        LabeledImage { image: Image::filled(640, 480, [0, 0, 0]), labels, source_path: path.into() }
    }

    #[test]
    fn csv_shapes() {
        let r = registry13();
        assert_eq!(aggregate_csv(&[], &r), "filename,width,height,class,x_min,y_min,x_max,y_max\n");
        let one = aggregate_csv(&[sample("a.ppm", vec![Label::new(1, BoxNorm::new(0.5, 0.5, 0.5, 0.5))])], &r);
        assert_eq!(one.lines().count(), 2);
        assert_eq!(one.lines().nth(1).unwrap(), "a.ppm,640,480,nut,160,120,480,360");
    }

    #[test]
    fn csv_round_trip_and_quoting() {
        let r = registry13();
        let ds: Vec<LabeledImage> = ["c, with comma.ppm", "b.ppm", "a \"q\".ppm"]
            .iter()
            .enumerate()
            .map(|(i, p)| {
                sample(p, vec![
                    Label::new(i, BoxNorm::new(0.3 + 0.1 * i as f64, 0.4, 0.2, 0.1 / 3.0)),
                    Label::new(12 - i, BoxNorm::new(0.7, 0.6 - 0.05 * i as f64, 0.15, 0.3)),
                ])
            })
            .collect();
        let text = aggregate_csv(&ds, &r);
        assert_eq!(text.lines().count(), 7);
        assert!(text.contains("\"c, with comma.ppm\""));
        let rows = parse_csv(&text).unwrap();
        assert_eq!(rows[0].filename, "a \"q\".ppm");
        assert_eq!(write_csv(&rows), text);
        for row in &rows {
            let s = ds.iter().find(|s| s.source_path == row.filename).unwrap();
            let n = corner_to_norm(&row.bbox, 640.0, 480.0).unwrap();
            let hit = s.labels.iter().any(|l| {
                (l.bbox.cx - n.cx).abs() < 1e-9 && (l.bbox.cy - n.cy).abs() < 1e-9
                    && (l.bbox.w - n.w).abs() < 1e-9 && (l.bbox.h - n.h).abs() < 1e-9
            });
            assert!(hit, "{row:?}");
        }
        assert!(parse_csv("file,w\n").is_err());
    }
}
