//! Seeded synthetic scenes of flat parametric parts on a dark background.
//!
//! Each class has its own colour and outline so that scenes are trivially
//! separable, and every shape touches all four edges of its box, so the
//! recorded ground truth is the tight pixel box of the rendered shape.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{ClassRegistry, Image, Label, LabeledImage};
use crate::geometry::BoxNorm;

pub const CANVAS: usize = 608;
pub const BACKGROUND: [u8; 3] = [32, 32, 32];
const PLACEMENT_RETRIES: usize = 2000;

const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [67, 99, 216],
    [245, 130, 49],
    [145, 30, 180],
    [66, 212, 244],
    [240, 50, 230],
    [191, 239, 69],
    [250, 190, 212],
    [70, 153, 144],
    [220, 190, 255],
    [154, 99, 36],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("could not place object {index} after {retries} attempts")]
    PlacementFailed { index: usize, retries: usize },
    #[error("invalid scene request: {0}")]
    InvalidSpec(String),
    #[error("unknown scenario `{0}`; expected 1, 2, 3, single-class, multi-class-group or all-classes")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Ellipse,
    Ring,
    Frame,
    Cross,
    Triangle,
}

impl Shape {
    pub fn for_class(class_id: usize) -> Self {
        const ALL: [Shape; 6] = [
            Shape::Rectangle,
            Shape::Ellipse,
            Shape::Ring,
            Shape::Frame,
            Shape::Cross,
            Shape::Triangle,
        ];
        ALL[class_id % ALL.len()]
    }

    /// Whether pixel `(x, y)` of a `w × h` box belongs to the shape.
    pub fn covers(self, x: usize, y: usize, w: usize, h: usize) -> bool {
        let (wf, hf) = (w as f64, h as f64);
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let (dx, dy) = ((px - wf / 2.0) / (wf / 2.0), (py - hf / 2.0) / (hf / 2.0));
        let r2 = dx * dx + dy * dy;
        let thickness = (w.min(h) / 6).max(2);
        match self {
            Shape::Rectangle => true,
            Shape::Ellipse => r2 <= 1.0 || x == w / 2 || y == h / 2,
            Shape::Ring => (0.36..=1.0).contains(&r2) || x == w / 2 && (y == 0 || y == h - 1) || y == h / 2 && (x == 0 || x == w - 1),
            Shape::Frame => x < thickness || y < thickness || x + thickness >= w || y + thickness >= h,
            Shape::Cross => (3 * x >= w && 3 * x < 2 * w) || (3 * y >= h && 3 * y < 2 * h),
            Shape::Triangle => (px - wf / 2.0).abs() <= py / hf * wf / 2.0 + 0.5,
        }
    }
}

pub fn class_color(class_id: usize) -> [u8; 3] {
    PALETTE[class_id % PALETTE.len()]
}

/// What to draw in one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub count_range: RangeInclusive<usize>,
    /// Minimum pixel gap between object boxes. Negative values allow boxes
    /// to overlap by up to that many pixels.
    pub min_gap: i64,
    pub canvas: usize,
    pub size_range: RangeInclusive<usize>,
    /// Classes to draw from; empty means all of the registry.
    pub class_pool: Vec<usize>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            count_range: 1..=3,
            min_gap: 4,
            canvas: CANVAS,
            size_range: 40..=110,
            class_pool: Vec::new(),
        }
    }
}

/// Pixel box `[x0, x1) × [y0, y1)` of one placed object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub class_id: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Placement {
    fn clear_of(&self, other: &Placement, gap: i64) -> bool {
        let (a, b) = (self, other);
        let sep = |lo_end: usize, hi_start: usize| hi_start as i64 - lo_end as i64 >= gap;
        sep(a.x1, b.x0) || sep(b.x1, a.x0) || sep(a.y1, b.y0) || sep(b.y1, a.y0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub sample: LabeledImage,
    pub placements: Vec<Placement>,
    /// Per pixel: 0 for background, otherwise 1 + index of the visible
    /// object. Later objects are drawn over earlier ones.
    pub instance_mask: Vec<u16>,
}

pub fn generate_synthetic_scene(seed: u64, registry: &ClassRegistry, spec: &SceneSpec) -> Result<SyntheticScene, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    render_scene(&mut rng, registry, spec, format!("synth_{seed:016x}.ppm"))
}

fn validate(registry: &ClassRegistry, spec: &SceneSpec) -> Result<(), SynthError> {
    let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
    if spec.count_range.is_empty() {
        return bad("empty count range");
    }
    if spec.size_range.is_empty() || *spec.size_range.start() == 0 || *spec.size_range.end() > spec.canvas {
        return bad("size range must be non-empty, positive and fit the canvas");
    }
    if spec.class_pool.iter().any(|&c| c >= registry.len()) {
        return bad("class pool refers to a class outside the registry");
    }
    Ok(())
}

fn render_scene(
    rng: &mut ChaCha8Rng,
    registry: &ClassRegistry,
    spec: &SceneSpec,
    name: String,
) -> Result<SyntheticScene, SynthError> {
    validate(registry, spec)?;
    let count = rng.gen_range(spec.count_range.clone());
    let classes: Vec<usize> = (0..count)
        .map(|_| {
            if spec.class_pool.is_empty() {
                rng.gen_range(0..registry.len())
            } else {
                spec.class_pool[rng.gen_range(0..spec.class_pool.len())]
            }
        })
        .collect();
    place_and_draw(rng, &classes, spec, name)
}

fn place_and_draw(rng: &mut ChaCha8Rng, classes: &[usize], spec: &SceneSpec, name: String) -> Result<SyntheticScene, SynthError> {
    let n = spec.canvas;
    let mut placements: Vec<Placement> = Vec::with_capacity(classes.len());
    for (index, &class_id) in classes.iter().enumerate() {
        let placed = (0..PLACEMENT_RETRIES).find_map(|_| {
            let w = rng.gen_range(spec.size_range.clone());
            let h = rng.gen_range(spec.size_range.clone());
            let x0 = rng.gen_range(0..=n - w);
            let y0 = rng.gen_range(0..=n - h);
            let p = Placement {
                class_id,
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            };
            placements.iter().all(|q| p.clear_of(q, spec.min_gap)).then_some(p)
        });
        match placed {
            Some(p) => placements.push(p),
            None => {
                return Err(SynthError::PlacementFailed {
                    index,
                    retries: PLACEMENT_RETRIES,
                })
            }
        }
    }

    let mut image = Image::filled(n, n, BACKGROUND);
    let mut mask = vec![0u16; n * n];
    let nf = n as f64;
    let mut labels = Vec::with_capacity(placements.len());
    for (i, p) in placements.iter().enumerate() {
        let shape = Shape::for_class(p.class_id);
        let color = class_color(p.class_id);
        let (w, h) = (p.x1 - p.x0, p.y1 - p.y0);
        for y in 0..h {
            for x in 0..w {
                if shape.covers(x, y, w, h) {
                    image.set(p.x0 + x, p.y0 + y, color);
                    mask[(p.y0 + y) * n + p.x0 + x] = i as u16 + 1;
                }
            }
        }
        labels.push(Label::new(
            p.class_id,
            BoxNorm::new(
                (p.x0 + p.x1) as f64 / 2.0 / nf,
                (p.y0 + p.y1) as f64 / 2.0 / nf,
                w as f64 / nf,
                h as f64 / nf,
            ),
        ));
    }
    Ok(SyntheticScene {
        sample: LabeledImage {
            image,
            labels,
            source_path: name,
        },
        placements,
        instance_mask: mask,
    })
}

/// The three evaluation scenarios: one kind of part per image, small mixed
/// groups, and every class at once packed closely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    SingleClass,
    MultiClassGroup,
    AllClasses,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::SingleClass, Scenario::MultiClassGroup, Scenario::AllClasses];

    pub fn number(self) -> u8 {
        match self {
            Scenario::SingleClass => 1,
            Scenario::MultiClassGroup => 2,
            Scenario::AllClasses => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::SingleClass => "single-class",
            Scenario::MultiClassGroup => "multi-class-group",
            Scenario::AllClasses => "all-classes",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "single-class" => Ok(Scenario::SingleClass),
            "2" | "multi-class-group" => Ok(Scenario::MultiClassGroup),
            "3" | "all-classes" => Ok(Scenario::AllClasses),
            other => Err(SynthError::UnknownScenario(other.to_string())),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// `count` scenes of one scenario. Scene `i` draws from its own stream of
/// the seeded generator, so any prefix of a longer run is identical.
pub fn generate_scenario(
    scenario: Scenario,
    seed: u64,
    count: usize,
    registry: &ClassRegistry,
) -> Result<Vec<SyntheticScene>, SynthError> {
    let k = registry.len();
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let name = format!("s{}_{i:04}.ppm", scenario.number());
            match scenario {
                Scenario::SingleClass => {
                    let class_id = rng.gen_range(0..k);
                    let spec = SceneSpec {
                        count_range: 1..=3,
                        min_gap: 8,
                        class_pool: vec![class_id],
                        ..SceneSpec::default()
                    };
                    render_scene(&mut rng, registry, &spec, name)
                }
                Scenario::MultiClassGroup => {
                    let spec = SceneSpec {
                        count_range: 2..=8,
                        min_gap: 0,
                        ..SceneSpec::default()
                    };
                    render_scene(&mut rng, registry, &spec, name)
                }
                Scenario::AllClasses => {
                    let spec = SceneSpec {
                        min_gap: -3,
                        size_range: 40..=90,
                        ..SceneSpec::default()
                    };
                    let extras = rng.gen_range(0..=3);
                    let mut classes: Vec<usize> = (0..k).collect();
                    classes.extend((0..extras).map(|_| rng.gen_range(0..k)));
                    place_and_draw(&mut rng, &classes, &spec, name)
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight_box(mask: &[u16], n: usize, id: u16) -> (usize, usize, usize, usize) {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, &m) in mask.iter().enumerate() {
            if m == id {
                let (x, y) = (i % n, i / n);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        (x0, y0, x1, y1)
    }

    #[test]
    fn deterministic_per_seed() {
        let reg = ClassRegistry::components();
        let a = generate_synthetic_scene(7, &reg, &SceneSpec::default()).unwrap();
        let b = generate_synthetic_scene(7, &reg, &SceneSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scene(8, &reg, &SceneSpec::default()).unwrap();
        assert_ne!(a.sample.image, c.sample.image);
    }

    #[test]
    fn single_count_gives_one_label() {
        let reg = ClassRegistry::components();
        let spec = SceneSpec { count_range: 1..=1, ..SceneSpec::default() };
        for seed in 0..5 {
            assert_eq!(generate_synthetic_scene(seed, &reg, &spec).unwrap().sample.labels.len(), 1);
        }
    }

    #[test]
    fn every_shape_fills_its_box_edges() {
        for class_id in 0..6 {
            let shape = Shape::for_class(class_id);
            for (w, h) in [(40, 40), (40, 110), (110, 40), (57, 83)] {
                let rows: Vec<bool> = (0..h).map(|y| (0..w).any(|x| shape.covers(x, y, w, h))).collect();
                let cols: Vec<bool> = (0..w).map(|x| (0..h).any(|y| shape.covers(x, y, w, h))).collect();
                assert!(rows[0] && rows[h - 1] && cols[0] && cols[w - 1], "{shape:?} {w}x{h}");
            }
        }
    }

    #[test]
    fn labels_match_visible_masks() {
        let reg = ClassRegistry::components();
        let spec = SceneSpec { count_range: 3..=6, ..SceneSpec::default() };
        for seed in 0..10 {
            let s = generate_synthetic_scene(seed, &reg, &spec).unwrap();
            for (i, (l, p)) in s.sample.labels.iter().zip(&s.placements).enumerate() {
                assert_eq!(tight_box(&s.instance_mask, CANVAS, i as u16 + 1), (p.x0, p.y0, p.x1, p.y1));
                assert!((l.bbox.w * CANVAS as f64 - (p.x1 - p.x0) as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn impossible_requests_fail() {
        let reg = ClassRegistry::components();
        let spec = SceneSpec { count_range: 60..=60, size_range: 150..=150, ..SceneSpec::default() };
        assert!(matches!(generate_synthetic_scene(1, &reg, &spec), Err(SynthError::PlacementFailed { .. })));
        assert!("4".parse::<Scenario>().is_err());
    }

    #[test]
    fn scenario_structure() {
        let reg = ClassRegistry::components();
        for s in generate_scenario(Scenario::SingleClass, 3, 10, &reg).unwrap() {
            let first = s.sample.labels[0].class_id;
            assert!((1..=3).contains(&s.sample.labels.len()));
            assert!(s.sample.labels.iter().all(|l| l.class_id == first));
        }
        for s in generate_scenario(Scenario::AllClasses, 3, 5, &reg).unwrap() {
            let mut seen = [false; 13];
            s.sample.labels.iter().for_each(|l| seen[l.class_id] = true);
            assert!(seen.iter().all(|&b| b));
        }
        let long = generate_scenario(Scenario::MultiClassGroup, 9, 4, &reg).unwrap();
        let short = generate_scenario(Scenario::MultiClassGroup, 9, 2, &reg).unwrap();
        assert_eq!(&long[..2], &short[..]);
    }
}
