use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn minnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn mnist() -> Option<String> {
    let dir = std::env::var_os("MINNET_MNIST")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("t10k-labels-idx1-ubyte")
        .is_file()
        .then(|| dir.to_string_lossy().into_owned())
}

#[test]
fn region_bound_prints_both_bounds() {
    let out = minnet(&["region-bound", "--depth", "2", "--width", "4", "--pieces", "2", "--input-width", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("32") && text.contains("64"), "{text}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(minnet(&["region-bound", "--width", "4"]).status.code(), Some(2));
    assert_eq!(minnet(&["train", "--preset", "desk"]).status.code(), Some(2));
    assert_eq!(minnet(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = minnet::model::shipped::MIN_MNIST.replace("classes = 10", "classes = 10\nwidth = 3");
    fs::write(&path, text).unwrap();
    let out = minnet(&["train", "--config", path.to_str().unwrap(), "--data", "."]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn train_eval_and_extract_round_trip() {
    let Some(data) = mnist() else {
        eprintln!("MNIST not found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let common = ["--preset", "desk", "--data", &data, "--out", out_dir];
    let train = minnet(&[&["train", "--epochs", "2", "--train-subset", "256"][..], &common[..]].concat());
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], minnet::cli::METRICS_SCHEMA);
    assert_eq!(lines[1], minnet::cli::METRICS_HEADER);
    assert_eq!(lines.len(), 4);
    let last_err: f64 = lines[3].split(',').nth(3).unwrap().parse().unwrap();

    let eval = minnet(&[&["eval", "--checkpoint", dir.path().join("last.ckpt").to_str().unwrap()][..], &common[..]].concat());
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let reported: f64 = String::from_utf8(eval.stdout).unwrap().trim().parse().unwrap();
    assert!((reported - last_err).abs() < 0.01, "{reported} vs {last_err}");

    let extract = minnet(&[&["extract", "--layer", "block1.mlp2", "--images", "0,1", "--top-percent", "25"][..], &common[..]].concat());
    assert!(extract.status.success(), "{}", String::from_utf8_lossy(&extract.stderr));
    let csv = fs::read_to_string(dir.path().join("extract.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(minnet::analysis::EXTRACT_CSV_HEADER));
    // 12 channels per image at desk width
    assert_eq!(csv.lines().count(), 1 + 2 * 12);
    let pgm = fs::read(dir.path().join("img0_block1_mlp2_c0.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
}
