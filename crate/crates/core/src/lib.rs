//! Desk-scale toolkit for the YOLOv4 detection pipeline: darknet network
//! descriptions, the network's building blocks on small tensors, anchor
//! decoding, non-max suppression, YOLO-format datasets with augmentation,
//! and COCO-style evaluation.

pub mod dataset;
pub mod evalkit;
pub mod geometry;
pub mod headfile;
pub mod netdef;
pub mod postprocess;
pub mod tensor;
