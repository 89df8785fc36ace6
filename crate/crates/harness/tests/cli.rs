mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{core_fixtures, tiny_network, toml_path};
use rpr_core::data::{generate_pairs, load_dataset, DatasetFormat, LoadOptions};
use rpr_core::model::{Backbone, Checkpoint, RprNetwork};
use rpr_core::synthetic::write_synthetic_dataset;

fn rpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic manifest dataset and a config that trains a tiny network
/// on it for two steps.
fn workspace(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    write_synthetic_dataset(&data, 6, 3, 0.5, 10.0).unwrap();
    let cfg = dir.join("rpr.toml");
    let text = format!(
        r#"
[data]
format = "manifest"
train_root = {d}
map_root = {d}
query_root = {d}

[network.motion]
variant = "score-map-dr4"
use_depth = true
width = 4
head_width = 4

[network.nc]
channels = [1, 2, 1]

[train]
batch_size = 4
max_epochs = 1
max_steps = 2
"#,
        d = toml_path(&data)
    );
    std::fs::write(&cfg, text).unwrap();
    (data, cfg)
}

#[test]
fn end_to_end_on_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (data, cfg) = workspace(dir);
    let cfg = s(&cfg);

    let train_out = dir.join("train");
    ok(rpr(&["train", "-c", cfg, "-o", s(&train_out)]));
    for f in ["checkpoints/best.ckpt", "checkpoints/epoch-001.ckpt", "history.json", "resolved_config.toml"] {
        assert!(train_out.join(f).is_file(), "{f}");
    }
    let snapshot = std::fs::read_to_string(train_out.join("resolved_config.toml")).unwrap();
    assert!(snapshot.contains("max_steps = 2"));
    let ckpt = train_out.join("checkpoints/best.ckpt");

    let eval_out = dir.join("eval-oracle");
    let table = ok(rpr(&["evaluate", "-c", cfg, "-o", s(&eval_out), "--oracle", "--top-n", "3"]));
    assert!(table.contains("0.00/0.00"), "{table}");
    let csv = std::fs::read_to_string(eval_out.join("report.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("all,corr,3,6,0.00/0.00,"), "{last}");
    assert!(last.ends_with(",100,100,100"), "{last}");
    for f in ["report.json", "report.txt", "queries.csv", "resolved_config.toml"] {
        assert!(eval_out.join(f).is_file(), "{f}");
    }

    let eval_net = dir.join("eval-net");
    ok(rpr(&[
        "evaluate", "-c", cfg, "-o", s(&eval_net), "--checkpoint", s(&ckpt), "--top-n", "2", "--selection", "gt",
    ]));
    let csv = std::fs::read_to_string(eval_net.join("report.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("all,gt,2,6,"));

    // Zeroed regression heads regress the identity, so an image from the
    // map localizes at that map frame's pose.
    let mut net = RprNetwork::new(&tiny_network(), (32, 32)).unwrap();
    net.zero_regression_heads();
    let ident = dir.join("identity.ckpt");
    Checkpoint::from_network(&net, Backbone::test_pyramid(0).id()).save(&ident).unwrap();
    let index = dir.join("index/map.idx");
    ok(rpr(&["build-index", "-c", cfg, "--index", s(&index)]));
    assert!(dir.join("index/resolved_config.toml").is_file());
    let json = ok(rpr(&[
        "localize",
        "-c",
        cfg,
        "--query",
        s(&data.join("frame-0002.color.png")),
        "--checkpoint",
        s(&ident),
        "--index",
        s(&index),
        "--top-n",
        "3",
    ]));
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["selected"], "frame-0002");
    assert_eq!(report["candidates"].as_array().unwrap().len(), 3);
    let frames = load_dataset(&data, DatasetFormat::Manifest, &LoadOptions::default()).unwrap().frames;
    let pose: Vec<f64> = report["pose"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(pose, frames[2].pose.to_row_major());

    let ov = dir.join("overlap");
    ok(rpr(&["overlap-report", "-c", cfg, "-o", s(&ov), "--oracle"]));
    let svg = dir.join("overlap.svg");
    let out = ok(rpr(&["plot", "--input", s(&ov.join("overlap.csv")), "--output", s(&svg)]));
    let n = generate_pairs(&frames, 1.5, 30.0, false).len();
    assert!(out.starts_with(&format!("plotted {n} rows")), "{out}");
    assert_eq!(std::fs::read_to_string(&svg).unwrap().matches("<circle").count(), n);

    let bad = dir.join("bad.idx");
    std::fs::write(&bad, b"garbage").unwrap();
    let o = rpr(&[
        "localize", "-c", cfg, "--query", s(&data.join("frame-0002.color.png")), "--checkpoint", s(&ident), "--index",
        s(&bad),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("index"));
}

#[test]
fn pairs_on_seven_scenes_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let root = core_fixtures().join("sevenscenes");
    let csv = tmp.path().join("out/pairs.csv");
    let root_set = format!("data.train_root={}", toml_path(&root));
    let out = ok(rpr(&["pairs", "--set", &root_set, "--csv", s(&csv)]));
    let frames = load_dataset(&root, DatasetFormat::SevenScenes, &LoadOptions::default()).unwrap().frames;
    let want = generate_pairs(&frames, 1.5, 30.0, false);
    assert!(out.starts_with(&format!("{} pairs from 5 frames", want.len())), "{out}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), want.len() + 1);
    for (line, p) in text.lines().skip(1).zip(&want) {
        assert!(line.starts_with(&format!("{},{},", p.query.id, p.reference.id)), "{line}");
    }
    assert!(tmp.path().join("out/resolved_config.toml").is_file());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (_, cfg) = workspace(dir);
    let cfg = s(&cfg);
    let out = s(dir);

    assert_eq!(code(&rpr(&["train", "-c", cfg, "-o", out, "--set", "train.lr=-1"])), 2);
    assert_eq!(code(&rpr(&["train", "-c", cfg, "-o", out, "--set", "train.optimizer=sgd"])), 2);
    assert_eq!(code(&rpr(&["evaluate", "-c", cfg, "-o", out, "--selection", "best"])), 2);
    assert_eq!(code(&rpr(&["evaluate", "-c", cfg, "-o", out])), 2);
    assert_eq!(code(&rpr(&["train", "-c", "/nonexistent/rpr.toml"])), 2);
    assert_eq!(code(&rpr(&["pairs", "-o", out])), 2);

    assert_eq!(code(&rpr(&["pairs", "-o", out, "--set", "data.train_root=/nonexistent"])), 3);
    assert_eq!(code(&rpr(&["plot", "--input", "/nonexistent.csv", "--output", "x.svg"])), 3);
    assert_eq!(code(&rpr(&["train", "-c", cfg, "-o", out, "--set", "data.trans_thresh=1e-9"])), 3);

    let o = rpr(&["train", "-c", cfg, "-o", out, "--set", "train.lr=1e300", "--set", "train.max_epochs=3"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
