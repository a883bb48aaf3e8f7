//! Network census on the published YOLOv4 description, checked against a
//! small independent interpreter of the cfg format.

use std::collections::HashMap;

use yolokit::netdef::{census, parse_cfg, LayerKind, NetDefError};

const YOLOV4: &str = include_str!("data/yolov4.cfg");

struct OracleLayer {
    kind: String,
    out: (u64, u64, u64),
    neurons: u64,
}

fn sections(text: &str) -> Vec<(String, HashMap<String, String>)> {
    let mut out: Vec<(String, HashMap<String, String>)> = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            out.push((line.trim_matches(['[', ']']).to_string(), HashMap::new()));
        } else {
            let (k, v) = line.split_once('=').unwrap();
            out.last_mut().unwrap().1.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    out
}

fn int(map: &HashMap<String, String>, key: &str, default: i64) -> i64 {
    map.get(key).map_or(default, |v| v.parse().unwrap())
}

/// Walks the layers with the darknet shape rules written out directly.
fn oracle(text: &str) -> ((u64, u64, u64), Vec<OracleLayer>) {
    let secs = sections(text);
    let net = &secs[0].1;
    let input = (int(net, "height", 0) as u64, int(net, "width", 0) as u64, int(net, "channels", 3) as u64);
    let mut layers: Vec<OracleLayer> = Vec::new();
    for (i, (kind, map)) in secs[1..].iter().enumerate() {
        let prev = if i == 0 { input } else { layers[i - 1].out };
        let abs = |v: i64| if v < 0 { (i as i64 + v) as usize } else { v as usize };
        let (out, neurons) = match kind.as_str() {
            "convolutional" => {
                let k = int(map, "size", 1) as u64;
                let s = int(map, "stride", 1) as u64;
                let p = if int(map, "pad", 0) == 1 { k / 2 } else { 0 };
                let f = int(map, "filters", 1) as u64;
                let h = (prev.0 + 2 * p - k) / s + 1;
                let w = (prev.1 + 2 * p - k) / s + 1;
                ((h, w, f), h * w * f)
            }
            "maxpool" => {
                let k = int(map, "size", 1) as u64;
                let s = int(map, "stride", 1) as u64;
                let p = k - 1;
                (((prev.0 + p - k) / s + 1, (prev.1 + p - k) / s + 1, prev.2), 0)
            }
            "upsample" => {
                let s = int(map, "stride", 2) as u64;
                ((prev.0 * s, prev.1 * s, prev.2), 0)
            }
            "route" => {
                let idx: Vec<usize> = map["layers"].split(',').map(|t| abs(t.trim().parse().unwrap())).collect();
                let groups = int(map, "groups", 1) as u64;
                let first = layers[idx[0]].out;
                let c: u64 = idx.iter().map(|&j| layers[j].out.2).sum();
                ((first.0, first.1, c / groups), 0)
            }
            _ => (prev, 0),
        };
        layers.push(OracleLayer { kind: kind.clone(), out, neurons });
    }
    (input, layers)
}

#[test]
fn published_network_matches_oracle_layer_by_layer() {
    let graph = parse_cfg(YOLOV4).unwrap();
    let c = census(&graph).unwrap();
    let (input, expected) = oracle(YOLOV4);
    assert_eq!(c.per_layer.len(), expected.len());
    assert_eq!(c.per_layer.len(), 162);
    for (got, want) in c.per_layer.iter().zip(&expected) {
        assert_eq!(got.kind.to_string(), want.kind, "layer {}", got.index);
        let s = got.out_shape;
        assert_eq!((s.height as u64, s.width as u64, s.channels as u64), want.out, "layer {}", got.index);
        assert_eq!(got.neurons, want.neurons, "layer {}", got.index);
    }
    assert_eq!(c.input_neurons, input.0 * input.1 * input.2);
    assert_eq!(c.input_neurons, 1_108_992);
    assert_eq!(c.conv_layer_count, 110);
    assert_eq!(c.hidden_neurons, expected.iter().map(|l| l.neurons).sum::<u64>());
}

#[test]
fn heads_sit_on_the_three_strides() {
    let graph = parse_cfg(YOLOV4).unwrap();
    let grids: Vec<(usize, usize)> = graph.yolo_grids().iter().map(|s| (s.height, s.channels)).collect();
    assert_eq!(grids, vec![(76, 255), (38, 255), (19, 255)]);
    let small = graph.with_input_size(416).unwrap();
    let grids: Vec<usize> = small.yolo_grids().iter().map(|s| s.height).collect();
    assert_eq!(grids, vec![52, 26, 13]);
}

#[test]
fn parameter_count_is_the_sum_of_conv_terms() {
    let graph = parse_cfg(YOLOV4).unwrap();
    let c = census(&graph).unwrap();
    let secs = sections(YOLOV4);
    let (input, expected) = oracle(YOLOV4);
    let mut total = 0u64;
    for (i, (kind, map)) in secs[1..].iter().enumerate() {
        if kind != "convolutional" {
            continue;
        }
        let in_c = if i == 0 { input.2 } else { expected[i - 1].out.2 };
        let f = int(map, "filters", 1) as u64;
        let k = int(map, "size", 1) as u64;
        let bn = if int(map, "batch_normalize", 0) == 1 { 3 * f } else { 0 };
        total += f * in_c * k * k + f + bn;
    }
    assert_eq!(c.total_parameters, total);
    assert!(c.per_layer.iter().filter(|l| l.kind != LayerKind::Convolutional).all(|l| l.params == 0));
}

#[test]
fn cfg_round_trip_is_a_fixed_point() {
    let first = parse_cfg(YOLOV4).unwrap().to_cfg_string();
    let reparsed = parse_cfg(&first).unwrap();
    assert_eq!(reparsed.shapes, parse_cfg(YOLOV4).unwrap().shapes);
    assert_eq!(reparsed.to_cfg_string(), first);
}

#[test]
fn input_must_be_multiple_of_32() {
    let bad = YOLOV4.replacen("width=608", "width=415", 1);
    let err = parse_cfg(&bad).unwrap_err();
    assert!(matches!(err, NetDefError::InputNotMultipleOf32 { value: 415, .. }));
    assert!(err.to_string().contains("multiple of 32"));
}
