//! Darknet `.cfg` network descriptions.
//!
//! The format is INI-like: `[section]` headers open a layer, `key=value`
//! lines set its attributes, and `#` / `;` start comments. The first section
//! must be `[net]`; every following section is one layer, indexed from zero
//! in the order it appears (darknet's own indexing, which `route` and
//! `shortcut` offsets refer to).

use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetDefError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}` in [{section}]")]
    DuplicateKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("missing [net] section")]
    MissingNet,
    #[error("line {line}: [net] must be the first section and appear once")]
    MisplacedNet { line: usize },
    #[error("input {dim} {value} is not a multiple of 32")]
    InputNotMultipleOf32 { dim: &'static str, value: usize },
    #[error("layer {layer} (line {line}): {message}")]
    Shape {
        layer: usize,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = NetDefError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Net,
    Convolutional,
    Shortcut,
    Route,
    MaxPool,
    Upsample,
    Yolo,
    Other(String),
}

impl LayerKind {
    fn from_section(name: &str) -> Self {
        match name {
            "net" | "network" => LayerKind::Net,
            "convolutional" | "conv" => LayerKind::Convolutional,
            "shortcut" => LayerKind::Shortcut,
            "route" => LayerKind::Route,
            "maxpool" | "max" => LayerKind::MaxPool,
            "upsample" => LayerKind::Upsample,
            "yolo" => LayerKind::Yolo,
            other => LayerKind::Other(other.to_string()),
        }
    }

    pub fn section_name(&self) -> &str {
        match self {
            LayerKind::Net => "net",
            LayerKind::Convolutional => "convolutional",
            LayerKind::Shortcut => "shortcut",
            LayerKind::Route => "route",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Upsample => "upsample",
            LayerKind::Yolo => "yolo",
            LayerKind::Other(name) => name,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.section_name())
    }
}

impl Serialize for LayerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.section_name())
    }
}

/// A typed attribute value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    IntList(Vec<i64>),
    RealList(Vec<f64>),
    Text(String),
}

fn parse_real(token: &str) -> Option<f64> {
    let first = token.chars().next()?;
    if !(first.is_ascii_digit() || matches!(first, '.' | '-' | '+')) {
        return None;
    }
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl Value {
    pub fn parse(raw: &str) -> Value {
        let raw = raw.trim();
        if let Ok(i) = raw.parse::<i64>() {
            return Value::Int(i);
        }
        if let Some(r) = parse_real(raw) {
            return Value::Real(r);
        }
        if raw.contains(',') {
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if let Ok(ints) = parts.iter().map(|p| p.parse::<i64>()).collect() {
                return Value::IntList(ints);
            }
            if let Some(reals) = parts.iter().map(|p| parse_real(p)).collect() {
                return Value::RealList(reals);
            }
        }
        Value::Text(raw.to_string())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// A single integer also reads as a one-element list.
    pub fn as_int_list(&self) -> Option<Vec<i64>> {
        match self {
            Value::Int(i) => Some(vec![*i]),
            Value::IntList(v) => Some(v.clone()),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Reals use the shortest round-trip form, which always keeps a `.`
        // or exponent so they never re-parse as integers.
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::IntList(v) => {
                let parts: Vec<String> = v.iter().map(i64::to_string).collect();
                f.write_str(&parts.join(","))
            }
            Value::RealList(v) => {
                let parts: Vec<String> = v.iter().map(|r| format!("{r:?}")).collect();
                f.write_str(&parts.join(","))
            }
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// One section of a cfg file.
///
/// Equality ignores `source_line` so that a graph and its re-serialized
/// form compare equal.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub attributes: IndexMap<String, Value>,
    pub source_line: usize,
}

impl PartialEq for LayerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.attributes == other.attributes
    }
}

impl LayerSpec {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.attributes.get(key)
    }

    fn shape_error(&self, layer: usize, message: impl Into<String>) -> NetDefError {
        NetDefError::Shape {
            layer,
            line: self.source_line,
            message: message.into(),
        }
    }

    fn int_or(&self, layer: usize, key: &str, default: i64) -> Result<i64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_int()
                .ok_or_else(|| self.shape_error(layer, format!("`{key}` must be an integer, got `{v}`"))),
        }
    }

    fn positive(&self, layer: usize, key: &str, default: i64) -> Result<usize> {
        let v = self.int_or(layer, key, default)?;
        if v <= 0 {
            return Err(self.shape_error(layer, format!("`{key}` must be positive, got {v}")));
        }
        Ok(v as usize)
    }
}

/// Resolved output shape of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn volume(&self) -> u64 {
        self.height as u64 * self.width as u64 * self.channels as u64
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Splits cfg text into sections without interpreting any layer.
pub fn parse_sections(text: &str) -> Result<Vec<LayerSpec>> {
    let mut sections: Vec<LayerSpec> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line
            .split(['#', ';'])
            .next()
            .unwrap_or_default()
            .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| NetDefError::Syntax {
                line: line_no,
                message: format!("unterminated section header `{line}`"),
            })?;
            let name = name.trim().to_ascii_lowercase();
            if name.is_empty() {
                return Err(NetDefError::Syntax {
                    line: line_no,
                    message: "empty section name".into(),
                });
            }
            sections.push(LayerSpec {
                kind: LayerKind::from_section(&name),
                attributes: IndexMap::new(),
                source_line: line_no,
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| NetDefError::Syntax {
            line: line_no,
            message: format!("expected `key=value`, found `{line}`"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(NetDefError::Syntax {
                line: line_no,
                message: "empty key".into(),
            });
        }
        let section = sections.last_mut().ok_or_else(|| NetDefError::Syntax {
            line: line_no,
            message: format!("`{key}` appears before any section header"),
        })?;
        if section.attributes.contains_key(&key) {
            return Err(NetDefError::DuplicateKey {
                line: line_no,
                section: section.kind.to_string(),
                key,
            });
        }
        section.attributes.insert(key, Value::parse(value));
    }
    Ok(sections)
}

/// A parsed network with every layer's output shape resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGraph {
    pub net: LayerSpec,
    pub layers: Vec<LayerSpec>,
    pub shapes: Vec<Shape>,
    pub input: Shape,
}

/// Parses cfg text and resolves every layer shape.
pub fn parse_cfg(text: &str) -> Result<NetGraph> {
    NetGraph::from_sections(parse_sections(text)?)
}

impl NetGraph {
    pub fn from_sections(mut sections: Vec<LayerSpec>) -> Result<Self> {
        if sections.is_empty() || sections[0].kind != LayerKind::Net {
            return match sections.iter().find(|s| s.kind == LayerKind::Net) {
                Some(net) => Err(NetDefError::MisplacedNet {
                    line: net.source_line,
                }),
                None => Err(NetDefError::MissingNet),
            };
        }
        let net = sections.remove(0);
        if let Some(dup) = sections.iter().find(|s| s.kind == LayerKind::Net) {
            return Err(NetDefError::MisplacedNet {
                line: dup.source_line,
            });
        }
        let mut graph = NetGraph {
            net,
            layers: sections,
            shapes: Vec::new(),
            input: Shape::new(0, 0, 0),
        };
        graph.resolve()?;
        Ok(graph)
    }

    /// Overrides the `[net]` width and height, then re-resolves shapes.
    pub fn with_input_size(&self, n: usize) -> Result<NetGraph> {
        let mut sections = Vec::with_capacity(self.layers.len() + 1);
        let mut net = self.net.clone();
        net.attributes.insert("width".into(), Value::Int(n as i64));
        net.attributes.insert("height".into(), Value::Int(n as i64));
        sections.push(net);
        sections.extend(self.layers.iter().cloned());
        NetGraph::from_sections(sections)
    }

    /// Recomputes every shape from the layer attributes.
    pub fn propagate_shapes(&self) -> Result<NetGraph> {
        let mut graph = self.clone();
        graph.resolve()?;
        Ok(graph)
    }

    fn input_shape(&self) -> Result<Shape> {
        let net_err = |message: String| NetDefError::Shape {
            layer: 0,
            line: self.net.source_line,
            message,
        };
        let dim = |key: &'static str, default: Option<i64>| -> Result<usize> {
            let v = match (self.net.get(key), default) {
                (Some(v), _) => v
                    .as_int()
                    .ok_or_else(|| net_err(format!("[net] `{key}` must be an integer")))?,
                (None, Some(d)) => d,
                (None, None) => return Err(net_err(format!("[net] is missing `{key}`"))),
            };
            if v <= 0 {
                return Err(net_err(format!("[net] `{key}` must be positive, got {v}")));
            }
            Ok(v as usize)
        };
        let width = dim("width", None)?;
        let height = dim("height", None)?;
        let channels = dim("channels", Some(3))?;
        for (name, value) in [("width", width), ("height", height)] {
            if value % 32 != 0 {
                return Err(NetDefError::InputNotMultipleOf32 { dim: name, value });
            }
        }
        Ok(Shape::new(height, width, channels))
    }

    fn resolve(&mut self) -> Result<()> {
        self.input = self.input_shape()?;
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().copied().unwrap_or(self.input);
            let shape = layer_shape(index, layer, prev, &shapes)?;
            shapes.push(shape);
        }
        self.shapes = shapes;
        Ok(())
    }

    /// Output shapes of the `[yolo]` layers, in file order.
    pub fn yolo_grids(&self) -> Vec<Shape> {
        self.layers
            .iter()
            .zip(&self.shapes)
            .filter(|(l, _)| l.kind == LayerKind::Yolo)
            .map(|(_, s)| *s)
            .collect()
    }

    /// Canonical cfg text: one header per section, `key=value` lines, a
    /// blank line between sections.
    pub fn to_cfg_string(&self) -> String {
        let mut out = String::new();
        for (i, layer) in std::iter::once(&self.net).chain(&self.layers).enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{}]\n", layer.kind));
            for (key, value) in &layer.attributes {
                out.push_str(&format!("{key}={value}\n"));
            }
        }
        out
    }
}

fn resolve_index(layer: &LayerSpec, index: usize, offset: i64) -> Result<usize> {
    let target = if offset < 0 {
        index as i64 + offset
    } else {
        offset
    };
    if target < 0 || target >= index as i64 {
        return Err(layer.shape_error(
            index,
            format!("reference {offset} does not resolve to an earlier layer"),
        ));
    }
    Ok(target as usize)
}

fn layer_shape(index: usize, layer: &LayerSpec, prev: Shape, shapes: &[Shape]) -> Result<Shape> {
    match &layer.kind {
        LayerKind::Net => unreachable!("[net] is split off before resolution"),
        LayerKind::Convolutional => {
            let filters = layer.positive(index, "filters", 1)?;
            let size = layer.positive(index, "size", 1)?;
            let stride = layer.positive(index, "stride", 1)?;
            let groups = layer.positive(index, "groups", 1)?;
            let pad = conv_padding(index, layer, size)?;
            if !prev.channels.is_multiple_of(groups) {
                return Err(layer.shape_error(
                    index,
                    format!("{} input channels not divisible into {groups} groups", prev.channels),
                ));
            }
            let out = |dim: usize| -> Result<usize> {
                let padded = dim + 2 * pad;
                if padded < size {
                    return Err(layer.shape_error(
                        index,
                        format!("kernel {size} larger than padded input {padded}"),
                    ));
                }
                Ok((padded - size) / stride + 1)
            };
            Ok(Shape::new(out(prev.height)?, out(prev.width)?, filters))
        }
        LayerKind::MaxPool => {
            let stride = layer.positive(index, "stride", 1)?;
            let size = layer.positive(index, "size", stride as i64)?;
            let padding = layer.int_or(index, "padding", size as i64 - 1)?;
            if padding < 0 {
                return Err(layer.shape_error(index, "`padding` must be non-negative"));
            }
            let out = |dim: usize| -> Result<usize> {
                let padded = dim + padding as usize;
                if padded < size {
                    return Err(layer.shape_error(index, format!("pool {size} larger than input")));
                }
                Ok((padded - size) / stride + 1)
            };
            Ok(Shape::new(out(prev.height)?, out(prev.width)?, prev.channels))
        }
        LayerKind::Upsample => {
            let stride = layer.positive(index, "stride", 2)?;
            Ok(Shape::new(prev.height * stride, prev.width * stride, prev.channels))
        }
        LayerKind::Shortcut => {
            let from = layer
                .get("from")
                .and_then(Value::as_int_list)
                .ok_or_else(|| layer.shape_error(index, "shortcut requires `from`"))?;
            for offset in from {
                let target = resolve_index(layer, index, offset)?;
                if shapes[target] != prev {
                    return Err(layer.shape_error(
                        index,
                        format!(
                            "shortcut from layer {target} has shape {}, expected {prev}",
                            shapes[target]
                        ),
                    ));
                }
            }
            Ok(prev)
        }
        LayerKind::Route => {
            let refs = layer
                .get("layers")
                .and_then(Value::as_int_list)
                .ok_or_else(|| layer.shape_error(index, "route requires integer `layers`"))?;
            if refs.is_empty() {
                return Err(layer.shape_error(index, "route has no layers"));
            }
            let groups = layer.positive(index, "groups", 1)?;
            let mut out: Option<Shape> = None;
            for offset in refs {
                let target = resolve_index(layer, index, offset)?;
                let s = shapes[target];
                if !s.channels.is_multiple_of(groups) {
                    return Err(layer.shape_error(
                        index,
                        format!("layer {target} channels {} not divisible by {groups} groups", s.channels),
                    ));
                }
                let part = s.channels / groups;
                out = Some(match out {
                    None => Shape::new(s.height, s.width, part),
                    Some(acc) if acc.height == s.height && acc.width == s.width => {
                        Shape::new(acc.height, acc.width, acc.channels + part)
                    }
                    Some(acc) => {
                        return Err(layer.shape_error(
                            index,
                            format!(
                                "route joins {}x{} with {}x{} from layer {target}",
                                acc.height, acc.width, s.height, s.width
                            ),
                        ))
                    }
                });
            }
            Ok(out.expect("refs is non-empty"))
        }
        LayerKind::Yolo | LayerKind::Other(_) => Ok(prev),
    }
}

fn conv_padding(index: usize, layer: &LayerSpec, size: usize) -> Result<usize> {
    if let Some(v) = layer.get("padding") {
        let p = v
            .as_int()
            .filter(|p| *p >= 0)
            .ok_or_else(|| layer.shape_error(index, "`padding` must be a non-negative integer"))?;
        return Ok(p as usize);
    }
    Ok(if layer.int_or(index, "pad", 0)? != 0 {
        size / 2
    } else {
        0
    })
}

/// Per-layer census row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCensus {
    pub index: usize,
    pub kind: LayerKind,
    pub out_shape: Shape,
    /// `out_h × out_w × filters` for convolutions, zero otherwise.
    pub neurons: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetCensus {
    pub input: Shape,
    pub conv_layer_count: usize,
    pub total_parameters: u64,
    pub input_neurons: u64,
    pub hidden_neurons: u64,
    pub per_layer: Vec<LayerCensus>,
}

/// Layer, parameter and neuron counts for a resolved graph.
///
/// Convolution parameters are `filters × in_channels/groups × k² + filters`,
/// plus `3 × filters` (scale, rolling mean, rolling variance) when
/// `batch_normalize=1`.
pub fn census(graph: &NetGraph) -> Result<NetCensus> {
    if graph.shapes.len() != graph.layers.len() {
        return Err(NetDefError::Shape {
            layer: graph.shapes.len(),
            line: graph
                .layers
                .get(graph.shapes.len())
                .map_or(graph.net.source_line, |l| l.source_line),
            message: "shape unresolved".into(),
        });
    }
    let mut per_layer = Vec::with_capacity(graph.layers.len());
    let (mut convs, mut params_total, mut hidden) = (0usize, 0u64, 0u64);
    for (index, (layer, &shape)) in graph.layers.iter().zip(&graph.shapes).enumerate() {
        let (neurons, params) = if layer.kind == LayerKind::Convolutional {
            let in_channels = if index == 0 {
                graph.input.channels
            } else {
                graph.shapes[index - 1].channels
            } as u64;
            let filters = shape.channels as u64;
            let size = layer.positive(index, "size", 1)? as u64;
            let groups = layer.positive(index, "groups", 1)? as u64;
            let mut params = filters * (in_channels / groups) * size * size + filters;
            if layer.int_or(index, "batch_normalize", 0)? != 0 {
                params += 3 * filters;
            }
            convs += 1;
            (shape.volume(), params)
        } else {
            (0, 0)
        };
        hidden += neurons;
        params_total += params;
        per_layer.push(LayerCensus {
            index,
            kind: layer.kind.clone(),
            out_shape: shape,
            neurons,
            params,
        });
    }
    Ok(NetCensus {
        input: graph.input,
        conv_layer_count: convs,
        total_parameters: params_total,
        input_neurons: graph.input.volume(),
        hidden_neurons: hidden,
        per_layer,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SizingError {
    #[error("at least one class is required")]
    ZeroClasses,
    #[error("input size {0} is not a positive multiple of 32")]
    InputNotMultipleOf32(usize),
}

/// Head width: three anchor slots of four box terms, objectness and one
/// score per class.
pub fn head_channels(num_classes: usize) -> std::result::Result<usize, SizingError> {
    if num_classes == 0 {
        return Err(SizingError::ZeroClasses);
    }
    Ok(3 * (4 + 1 + num_classes))
}

/// Grid sizes at strides 8, 16 and 32.
pub fn grid_sizes(input_n: usize) -> std::result::Result<[usize; 3], SizingError> {
    if input_n == 0 || !input_n.is_multiple_of(32) {
        return Err(SizingError::InputNotMultipleOf32(input_n));
    }
    Ok([input_n / 8, input_n / 16, input_n / 32])
}

/// Sum of grid cells over the three output scales.
pub fn total_grid_cells(input_n: usize) -> std::result::Result<usize, SizingError> {
    Ok(grid_sizes(input_n)?.iter().map(|g| g * g).sum())
}
