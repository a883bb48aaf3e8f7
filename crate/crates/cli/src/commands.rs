use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yolokit::dataset::synth::{generate_scenario, Scenario};
use yolokit::dataset::{
    aggregate_csv, corners_to_labels, expand_dataset, read_labelimg_corners, read_ppm, read_yolo_labels, write_labelimg_corners,
    write_ppm, write_yolo_labels, ClassRegistry, LabeledImage, RotateOptions,
};
use yolokit::evalkit::{map_50_95, scenario_report, EvalDetection, GroundTruth, ImageEval};
use yolokit::geometry::{norm_to_corner, BoxCorner};
use yolokit::headfile::{decode_head, encode_head};
use yolokit::netdef::{census, grid_sizes, head_channels, parse_cfg};
use yolokit::postprocess::{detect_frame, encode_targets, format_detection_lines, parse_detection_lines};
use yolokit::tensor::Tensor;

use crate::config::RunConfig;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Files in `dir` whose name ends with `suffix`, sorted by path.
fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry.with_context(|| format!("listing {}", dir.display()))?.path();
        let matches = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(suffix) && n.len() > suffix.len());
        if matches && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Label files of a directory, skipping the class registry.
fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(files_with_suffix(dir, ".txt")?
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != "classes.txt"))
        .collect())
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// The configured registry, else `classes.txt` beside the data, else the
/// built-in component names.
fn registry(config: &RunConfig, data_dir: Option<&Path>) -> Result<ClassRegistry> {
    let path = config
        .classes
        .clone()
        .or_else(|| data_dir.map(|d| d.join("classes.txt")).filter(|p| p.is_file()));
    match path {
        Some(p) => ClassRegistry::from_text(&read_text(&p)?).with_context(|| format!("class registry {}", p.display())),
        None => Ok(ClassRegistry::components()),
    }
}

fn load_dataset(dir: &Path, registry: &ClassRegistry) -> Result<Vec<LabeledImage>> {
    files_with_suffix(dir, ".ppm")?
        .into_iter()
        .map(|path| {
            let image = read_ppm(&read_bytes(&path)?).with_context(|| format!("image {}", path.display()))?;
            let label_path = path.with_extension("txt");
            let labels = if label_path.is_file() {
                read_yolo_labels(&read_text(&label_path)?, registry).with_context(|| format!("labels {}", label_path.display()))?
            } else {
                Vec::new()
            };
            Ok(LabeledImage {
                image,
                labels,
                source_path: path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
            })
        })
        .collect()
}

pub fn netinfo(cfg: &Path, input: Option<usize>, json: bool) -> Result<ExitCode> {
    let text = read_text(cfg)?;
    let mut graph = parse_cfg(&text).with_context(|| format!("{}", cfg.display()))?;
    if let Some(n) = input {
        graph = graph.with_input_size(n).with_context(|| format!("{}", cfg.display()))?;
    }
    let c = census(&graph)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&c)?);
        return Ok(ExitCode::SUCCESS);
    }
    println!("{:>5}  {:<14}  {:>16}  {:>12}  {:>12}", "layer", "type", "output", "neurons", "params");
    for l in &c.per_layer {
        let shape = format!("{}x{}x{}", l.out_shape.height, l.out_shape.width, l.out_shape.channels);
        println!("{:>5}  {:<14}  {:>16}  {:>12}  {:>12}", l.index, l.kind.to_string(), shape, l.neurons, l.params);
    }
    println!("input: {}x{}x{}", c.input.height, c.input.width, c.input.channels);
    println!("convolutional layers: {}", c.conv_layer_count);
    println!("parameters: {}", c.total_parameters);
    println!("input neurons: {}", c.input_neurons);
    println!("hidden neurons: {}", c.hidden_neurons);
    Ok(ExitCode::SUCCESS)
}

pub fn augment(config: &RunConfig, dataset: &Path, out: &Path) -> Result<ExitCode> {
    let registry = registry(config, Some(dataset))?;
    let samples = load_dataset(dataset, &registry)?;
    let options = RotateOptions {
        min_visible: config.min_visible,
    };
    let expansion = expand_dataset(&samples, &config.rotations, &config.flips, registry.len(), config.class_floor, &options);
    create_dir(out)?;
    for s in &expansion.samples {
        let path = out.join(&s.source_path);
        write_file(&path, write_ppm(&s.image))?;
        write_file(&path.with_extension("txt"), write_yolo_labels(&s.labels))?;
    }
    write_file(&out.join("classes.txt"), registry.to_text())?;

    let mut report = format!(
        "{} source images, {} variants, floor {}\n",
        samples.len(),
        expansion.samples.len(),
        expansion.floor
    );
    for (id, name) in registry.names().iter().enumerate() {
        let count = expansion.class_counts[id];
        let flag = if count < expansion.floor { "  below floor" } else { "" };
        report.push_str(&format!("{name:<16} {count:>8}{flag}\n"));
    }
    write_file(&out.join("class_counts.txt"), &report)?;
    print!("{report}");
    if !expansion.below_floor.is_empty() {
        eprintln!("warning: {} classes below the floor of {}", expansion.below_floor.len(), expansion.floor);
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_size(text: &str) -> Result<(usize, usize)> {
    let (w, h) = text.split_once(['x', 'X']).with_context(|| format!("size `{text}` is not WxH"))?;
    let (w, h): (usize, usize) = (w.parse()?, h.parse()?);
    if w == 0 || h == 0 {
        bail!("size `{text}` must be positive");
    }
    Ok((w, h))
}

pub fn labels_convert(config: &RunConfig, input: &Path, from: &str, to: &str, size: Option<&str>, out: &Path) -> Result<ExitCode> {
    if from == to {
        bail!("--from and --to are both `{from}`");
    }
    let registry = registry(config, Some(input))?;
    let fallback = size.map(parse_size).transpose()?;
    create_dir(out)?;
    for path in label_files(input)? {
        let ppm = path.with_extension("ppm");
        let dims = if ppm.is_file() {
            let img = read_ppm(&read_bytes(&ppm)?).with_context(|| format!("image {}", ppm.display()))?;
            (img.width(), img.height())
        } else {
            fallback.with_context(|| format!("no image for {} and no --size given", path.display()))?
        };
        let text = read_text(&path)?;
        let converted = match from {
            "labelimg" => {
                let boxes = read_labelimg_corners(&text, dims).with_context(|| format!("{}", path.display()))?;
                let labels = corners_to_labels(&boxes, dims, &registry)
                    .map_err(anyhow::Error::msg)
                    .with_context(|| format!("{}", path.display()))?;
                write_yolo_labels(&labels)
            }
            _ => {
                let labels = read_yolo_labels(&text, &registry).with_context(|| format!("{}", path.display()))?;
                let boxes = labels
                    .iter()
                    .map(|l| {
                        let name = registry.name(l.class_id).unwrap_or_default().to_string();
                        Ok((name, norm_to_corner(&l.bbox, dims.0 as f64, dims.1 as f64)?))
                    })
                    .collect::<Result<Vec<(String, BoxCorner)>>>()?;
                write_labelimg_corners(&boxes)
            }
        };
        write_file(&out.join(path.file_name().expect("listed files have names")), converted)?;
    }
    write_file(&out.join("classes.txt"), registry.to_text())?;
    Ok(ExitCode::SUCCESS)
}

pub fn labels_csv(config: &RunConfig, dataset: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let registry = registry(config, Some(dataset))?;
    let samples = load_dataset(dataset, &registry)?;
    let csv = aggregate_csv(&samples, &registry);
    match out {
        Some(path) => write_file(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn head_path(dir: &Path, stem: &str, scale: usize) -> PathBuf {
    dir.join(format!("{stem}.s{scale}.yf"))
}

pub fn encode(config: &RunConfig, dataset: &Path, out: &Path) -> Result<ExitCode> {
    let registry = registry(config, Some(dataset))?;
    let n = config.input_n as f64;
    create_dir(out)?;
    for path in label_files(dataset)? {
        let labels = read_yolo_labels(&read_text(&path)?, &registry).with_context(|| format!("{}", path.display()))?;
        let truths = labels
            .iter()
            .map(|l| Ok((l.class_id, norm_to_corner(&l.bbox, n, n)?)))
            .collect::<Result<Vec<_>>>()?;
        let heads = encode_targets(&truths, &config.anchors, registry.len(), config.input_n)
            .with_context(|| format!("{}", path.display()))?;
        let stem = stem(&path);
        for (scale, head) in heads.iter().enumerate() {
            write_file(&head_path(out, &stem, scale), encode_head(head)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_head(path: &Path) -> Result<Tensor> {
    decode_head(&read_bytes(path)?).with_context(|| format!("head file {}", path.display()))
}

fn detect_one(config: &RunConfig, names: &[String], files: [&Path; 3]) -> Result<String> {
    let heads = files.map(read_head);
    let [a, b, c] = heads;
    let (a, b, c) = (a?, b?, c?);
    let detections = detect_frame([&a, &b, &c], &config.anchors, &config.detect_config(), names)?;
    Ok(format_detection_lines(&detections))
}

pub fn detect_files(config: &RunConfig, files: &[PathBuf], out: Option<&Path>) -> Result<ExitCode> {
    let registry = registry(config, None)?;
    let lines = detect_one(config, registry.names(), [&files[0], &files[1], &files[2]])?;
    match out {
        Some(path) => write_file(path, lines)?,
        None => print!("{lines}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn detect_dir(config: &RunConfig, dir: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let out = out.context("--heads-dir needs --out <dir>")?;
    let registry = registry(config, None)?;
    create_dir(out)?;
    for first in files_with_suffix(dir, ".s0.yf")? {
        let name = first.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let stem = &name[..name.len() - ".s0.yf".len()];
        let (second, third) = (head_path(dir, stem, 1), head_path(dir, stem, 2));
        let lines = detect_one(config, registry.names(), [&first, &second, &third])?;
        write_file(&out.join(format!("{stem}.txt")), lines)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(
    config: &RunConfig,
    detections: &Path,
    truth: &Path,
    scenario: Option<&str>,
    table: bool,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let registry = registry(config, Some(truth))?;
    let n = config.input_n as f64;
    let mut images = Vec::new();
    for path in label_files(truth)? {
        let labels = read_yolo_labels(&read_text(&path)?, &registry).with_context(|| format!("{}", path.display()))?;
        let truths = labels
            .iter()
            .map(|l| {
                Ok(GroundTruth {
                    class_id: l.class_id,
                    bbox: norm_to_corner(&l.bbox, n, n)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let det_path = detections.join(path.file_name().expect("listed files have names"));
        let dets = if det_path.is_file() {
            parse_detection_lines(&read_text(&det_path)?)
                .with_context(|| format!("{}", det_path.display()))?
                .into_iter()
                .map(|d| {
                    let class_id = registry
                        .id_of(&d.class_name)
                        .with_context(|| format!("{}: unknown class `{}`", det_path.display(), d.class_name))?;
                    Ok(EvalDetection {
                        class_id,
                        confidence: d.confidence,
                        bbox: d.bbox,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        images.push(ImageEval { detections: dets, truths });
    }
    let report = match scenario {
        Some(tag) => {
            let tag = match tag {
                "1" | "2" | "3" => tag.parse::<Scenario>()?.tag(),
                other => other,
            };
            scenario_report(tag, &images, registry.names())?
        }
        None => map_50_95(&images, registry.names())?,
    };
    let text = if table {
        report.table()
    } else {
        format!("{}\n", serde_json::to_string_pretty(&report)?)
    };
    match out {
        Some(path) => write_file(path, text)?,
        None => print!("{text}"),
    }
    if report.failed_images > 0 {
        eprintln!("{} of {} images have misses or false positives", report.failed_images, report.images);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(config: &RunConfig, seed: u64, scenario: &str, count: usize, out: &Path) -> Result<ExitCode> {
    let scenario: Scenario = scenario.parse()?;
    let registry = registry(config, None)?;
    let scenes = generate_scenario(scenario, seed, count, &registry)?;
    create_dir(out)?;
    for scene in &scenes {
        let path = out.join(&scene.sample.source_path);
        write_file(&path, write_ppm(&scene.sample.image))?;
        write_file(&path.with_extension("txt"), write_yolo_labels(&scene.sample.labels))?;
    }
    write_file(&out.join("classes.txt"), registry.to_text())?;
    let objects: usize = scenes.iter().map(|s| s.sample.labels.len()).sum();
    eprintln!("{}: {} images, {} objects", scenario.tag(), scenes.len(), objects);
    Ok(ExitCode::SUCCESS)
}

fn random_head(rng: &mut ChaCha8Rng, grid: usize, num_classes: usize) -> Tensor {
    let slot_len = 5 + num_classes;
    let channels = 3 * slot_len;
    let mut values = Vec::with_capacity(grid * grid * channels);
    for _ in 0..grid * grid {
        for k in 0..channels {
            values.push(match k % slot_len {
                0..=3 => rng.gen_range(-1.0..1.0),
                4 => rng.gen_range(-6.0..3.0),
                _ => rng.gen_range(-6.0..6.0),
            });
        }
    }
    Tensor::new(grid, grid, channels, values).expect("length matches shape")
}

pub fn bench(config: &RunConfig, frames: usize, input_n: usize) -> Result<ExitCode> {
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    let registry = registry(config, None)?;
    let grids = grid_sizes(input_n)?;
    head_channels(registry.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let detect = config.detect_config();
    let mut times = Vec::with_capacity(frames);
    let mut kept = 0usize;
    for _ in 0..frames {
        let heads = grids.map(|g| random_head(&mut rng, g, registry.len()));
        let start = Instant::now();
        let dets = detect_frame([&heads[0], &heads[1], &heads[2]], &config.anchors, &detect, registry.names())?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        kept += dets.len();
    }
    times.sort_by(f64::total_cmp);
    let pct = |p: f64| times[((p * frames as f64).ceil() as usize).clamp(1, frames) - 1];
    let candidates: usize = grids.iter().map(|g| 3 * g * g).sum();
    println!("frames: {frames}");
    println!("input: {input_n}");
    println!("candidates per frame: {candidates}");
    println!("mean detections per frame: {:.2}", kept as f64 / frames as f64);
    println!("p50: {:.3} ms", pct(0.50));
    println!("p99: {:.3} ms", pct(0.99));
    Ok(ExitCode::SUCCESS)
}
