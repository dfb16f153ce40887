use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uax_core::cli::{sha256_file, RunManifest, MANIFEST_FILE};

fn uax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uax")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = uax(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-data → train (both archs) → craft (one artifact each) → eval → transfer.
fn pipeline(root: &Path) {
    let data = root.join("data");
    let (train, test) = (data.join("train"), data.join("test"));
    ok(&["gen-data", "--identities", "9", "--images", "3", "--size", "24", "--seed", "4", "--out", s(&data)]);
    for arch in ["tiny_cnn", "mlp"] {
        let out = root.join(arch);
        ok(&["train", "--arch", arch, "--data", s(&train), "--size", "24", "--epochs", "3", "--out", s(&out)]);
        ok(&[
            "craft", "--model", s(&out), "--train", s(&train), "--iters", "15", "--batch", "4",
            "--seed-identity", "id0001", "--out", s(&root.join(format!("uax_{arch}"))),
        ]);
    }
    let (u1, u2) = (root.join("uax_tiny_cnn"), root.join("uax_mlp"));
    ok(&[
        "eval", "--model", s(&root.join("tiny_cnn")), "--uax", s(&u1), "--train", s(&train), "--test", s(&test),
        "--hist-bins", "7", "--out", s(&root.join("eval")),
    ]);
    ok(&[
        "transfer", "--model", &format!("tiny_cnn={}", s(&root.join("tiny_cnn"))), "--model",
        s(&root.join("mlp").join("model.uaxm")), "--uax", s(&u1), s(&u2), "--train", s(&train), "--test", s(&test),
        "--out", s(&root.join("transfer")),
    ]);
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != MANIFEST_FILE {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_reproducible_and_manifested() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let listed = files(a.path());
    assert_eq!(listed, files(b.path()));
    for rel in &listed {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
    }
    for expected in ["eval/report_train.json", "eval/report_test.json", "eval/eer.json", "transfer/transfer_test.csv"] {
        assert!(listed.contains(&PathBuf::from(expected)), "missing {expected}");
    }

    let eval = a.path().join("eval");
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(eval.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.command, "eval");
    for record in &manifest.outputs {
        assert_eq!(sha256_file(&eval.join(&record.path)).unwrap().0, record.sha256);
    }
    assert!(manifest.inputs.iter().any(|r| r.path.ends_with("model.uaxm")));

    let hist = fs::read_to_string(eval.join("hist_train.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 7);
    let matrix = fs::read_to_string(a.path().join("transfer/transfer_train.csv")).unwrap();
    assert_eq!(matrix.lines().next().unwrap(), "source\\target,tiny_cnn,mlp");
}

#[test]
fn usage_errors_exit_with_one() {
    let out = uax(&["train", "--arch", "resnet", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tiny_cnn") && err.contains("mlp"), "{err}");
    assert_eq!(uax(&["craft", "--xi", "0", "--model", "m", "--train", "t", "--out", "o"]).status.code(), Some(1));
    assert_eq!(uax(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(uax(&["--help"]).status.code(), Some(0));
    assert_eq!(uax(&["--version"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = uax(&["eval", "--model", "missing", "--uax", "u", "--train", "t", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 3}"#).unwrap();
    let out = uax(&["--config", s(&cfg), "gen-data", "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn transfer_names_models_without_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let train = data.join("train");
    ok(&["gen-data", "--identities", "6", "--images", "2", "--size", "16", "--out", s(&data)]);
    for arch in ["tiny_cnn", "mlp"] {
        ok(&["train", "--arch", arch, "--data", s(&train), "--size", "16", "--epochs", "1", "--out", s(&root.path().join(arch))]);
    }
    let uax_dir = root.path().join("u");
    ok(&["craft", "--model", s(&root.path().join("tiny_cnn")), "--train", s(&train), "--iters", "2", "--batch", "2", "--out", s(&uax_dir)]);
    let out = uax(&[
        "transfer", "--model", s(&root.path().join("tiny_cnn")), "--model", s(&root.path().join("mlp")),
        "--uax", s(&uax_dir), "--train", s(&train), "--out", s(&root.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mlp"));
}
