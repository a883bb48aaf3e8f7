use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const YOLOV4_CFG: &str = include_str!("../../core/tests/data/yolov4.cfg");

fn yolokit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yolokit")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero_everywhere() {
    for cmd in [
        vec!["--help"],
        vec!["--version"],
        vec!["netinfo", "--help"],
        vec!["augment", "--help"],
        vec!["labels", "convert", "--help"],
        vec!["labels", "csv", "--help"],
        vec!["encode", "--help"],
        vec!["detect", "--help"],
        vec!["eval", "--help"],
        vec!["synth", "--help"],
        vec!["bench", "--help"],
    ] {
        let out = yolokit(&cmd);
        assert_eq!(code(&out), 0, "{cmd:?}");
        assert!(!out.stdout.is_empty(), "{cmd:?}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&yolokit(&["--bogus"])), 2);
    assert_eq!(code(&yolokit(&["synth", "--out", "x"])), 2);
    assert_eq!(code(&yolokit(&["frobnicate"])), 2);
    assert_eq!(code(&yolokit(&[])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = yolokit(&["synth", "--scenario", "9", "--count", "1", "--out", s(&dir.path().join("d"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn netinfo_reports_the_published_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("yolov4.cfg");
    fs::write(&cfg, YOLOV4_CFG).unwrap();
    let out = yolokit(&["netinfo", s(&cfg)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("input neurons: 1108992"), "{text}");
    assert!(text.contains("convolutional layers: 110"), "{text}");

    let out = yolokit(&["netinfo", s(&cfg), "--json", "--input", "416"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["input_neurons"], 416 * 416 * 3);

    assert_eq!(code(&yolokit(&["netinfo", s(&cfg), "--input", "415"])), 2);
}

#[test]
fn netinfo_rejects_misaligned_input_and_counts_minimal_nets() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, YOLOV4_CFG.replacen("width=608", "width=415", 1)).unwrap();
    let out = yolokit(&["netinfo", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 32"));

    let one = dir.path().join("one.cfg");
    fs::write(&one, "[net]\nwidth=64\nheight=64\nchannels=3\n\n[convolutional]\nfilters=4\nsize=3\nstride=1\npad=1\nactivation=leaky\n").unwrap();
    let out = yolokit(&["netinfo", s(&one)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("convolutional layers: 1"));
}

#[test]
fn missing_files_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("nope.cfg");
    assert_eq!(code(&yolokit(&["netinfo", s(&gone)])), 3);
    assert_eq!(code(&yolokit(&["--config", s(&gone), "--dump-config"])), 3);
}

#[test]
fn dumped_config_reads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = yolokit(&["--dump-config"]);
    assert_eq!(code(&first), 0);
    let path = dir.path().join("run.conf");
    fs::write(&path, &first.stdout).unwrap();
    let second = yolokit(&["--config", s(&path), "--dump-config"]);
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);

    fs::write(&path, "no_such_key = 1\n").unwrap();
    assert_eq!(code(&yolokit(&["--config", s(&path), "--dump-config"])), 2);
}

#[test]
fn eval_exits_one_when_an_image_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let heads = dir.path().join("heads");
    let dets = dir.path().join("dets");
    assert_eq!(code(&yolokit(&["synth", "--scenario", "2", "--count", "4", "--out", s(&data)])), 0);
    assert_eq!(code(&yolokit(&["encode", s(&data), "--out", s(&heads)])), 0);
    assert_eq!(code(&yolokit(&["detect", "--heads-dir", s(&heads), "--out", s(&dets)])), 0);
    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--detections", s(&dets), "--truth", s(&data)];
        args.extend_from_slice(extra);
        yolokit(&args)
    };
    let ok = eval(&[]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["map_50_95"], 1.0);

    // Drop one image's detections: its objects become misses.
    let victim = fs::read_dir(&dets).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(victim).unwrap();
    let failed = eval(&["--table"]);
    assert_eq!(code(&failed), 1);
    assert!(!failed.stdout.is_empty());
}

#[test]
fn bench_prints_latency_lines() {
    let out = yolokit(&["bench", "--frames", "3", "--input", "416"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("10647"), "{text}");
    assert_eq!(code(&yolokit(&["bench", "--frames", "1", "--input", "400"])), 2);
}
