//! Dataset tooling: RGB images, label formats, augmentation and synthetic
//! scenes.
//!
//! Normalized label coordinates are kept on a dyadic lattice of 2⁻³⁶. Every
//! value on that lattice satisfies `1 − (1 − v) = v` exactly, which makes
//! flips and quarter-turn rotations exact involutions on labels. Snapping
//! moves a coordinate by at most 7.3e-12.

mod augment;
mod labels;
mod ppm;
pub mod synth;

pub use augment::{expand_dataset, flip, rotate, variant_name, Expansion, FlipAxis, RotateOptions, DEFAULT_CLASS_FLOOR, DEFAULT_MIN_VISIBLE};
pub use labels::{
    aggregate_csv, aggregate_rows, corners_to_labels, parse_csv, read_labelimg_corners, read_yolo_labels, write_csv, write_labelimg_corners,
    write_yolo_labels, CsvRow, LabelError,
};
pub use ppm::{read_ppm, write_ppm, PpmError};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::BoxNorm;

const LATTICE: f64 = (1u64 << 36) as f64;

pub fn snap(v: f64) -> f64 {
    (v * LATTICE).round() / LATTICE
}

pub fn snap_box(b: BoxNorm) -> BoxNorm {
    BoxNorm::new(snap(b.cx), snap(b.cy), snap(b.w), snap(b.h))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("pixel buffer has {found} bytes, {width}x{height} RGB needs {expected}")]
    BufferLength {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
}

/// An 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferLength {
                width,
                height,
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: rgb.repeat(width * height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Label {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: BoxNorm,
}

impl Label {
    /// Builds a label with its coordinates snapped to the label lattice.
    pub fn new(class_id: usize, bbox: BoxNorm) -> Self {
        Self {
            class_id,
            bbox: snap_box(bbox),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub labels: Vec<Label>,
    pub source_path: String,
}

impl LabeledImage {
    /// File name without directory or extension.
    pub fn stem(&self) -> &str {
        let name = self
            .source_path
            .rsplit(['/', '\\'])
            .next()
            .unwrap_or(&self.source_path);
        match name.rfind('.') {
            Some(dot) if dot > 0 => &name[..dot],
            _ => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("class registry is empty")]
    Empty,
    #[error("line {line}: class name `{name}` is empty or contains whitespace")]
    BadName { line: usize, name: String },
    #[error("line {line}: class `{name}` is listed twice")]
    Duplicate { line: usize, name: String },
}

/// Ordered class names; a class id is its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassRegistry {
    names: Vec<String>,
}

impl ClassRegistry {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, RegistryError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(RegistryError::Empty);
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(RegistryError::BadName {
                    line: i + 1,
                    name: name.clone(),
                });
            }
            if names[..i].contains(name) {
                return Err(RegistryError::Duplicate {
                    line: i + 1,
                    name: name.clone(),
                });
            }
        }
        Ok(Self { names })
    }

    /// Parses `classes.txt`: one name per line. Trailing blank lines are
    /// ignored.
    pub fn from_text(text: &str) -> Result<Self, RegistryError> {
        let mut lines: Vec<&str> = text.lines().map(str::trim).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        Self::new(lines)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.names.join("\n");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Thirteen stand-in component classes for synthetic scenes.
    pub fn components() -> Self {
        Self::new([
            "bolt", "nut", "washer", "gear", "bracket", "spacer", "pin", "clip", "bushing", "flange", "spring",
            "shaft", "plate",
        ])
        .expect("static registry is valid")
    }
}
