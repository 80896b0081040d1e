use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn domm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_domm")).args(args).output().expect("spawn domm")
}

fn ok(args: &[&str]) {
    let out = domm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpus; returns the manifest path.
fn corpus(dir: &Path) -> PathBuf {
    let cfg = dir.join("synth.json");
    fs::write(&cfg, r#"{"n_utterances": 6, "frames_per_utterance": 150, "feature_dim": 4, "n_annotators": 4, "n_folds": 3, "seed": 5}"#)
        .unwrap();
    let out = dir.join("corpus");
    ok(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    out.join("manifest.json")
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_is_reproducible() {
    let t = TempDir::new().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    ok(&["synth", "--preset", "noiseless", "--seed", "2", "--out", s(&a)]);
    ok(&["synth", "--preset", "noiseless", "--seed", "2", "--out", s(&b)]);
    assert_eq!(tree(&a), tree(&b));
    assert!(a.join("run.json").exists());
}

#[test]
fn convert_train_xval_rerun_identically() {
    let t = TempDir::new().unwrap();
    let m = corpus(t.path());
    let cfg = t.path().join("exp.json");
    fs::write(&cfg, r#"{"train_splits": ["fold00", "fold01"], "test_splits": ["fold02"]}"#).unwrap();
    for cmd in ["convert", "train", "xval"] {
        let a = t.path().join(format!("{cmd}_a"));
        let b = t.path().join(format!("{cmd}_b"));
        for out in [&a, &b] {
            ok(&[cmd, "--manifest", s(&m), "--config", s(&cfg), "--out", s(out)]);
        }
        let ta = tree(&a);
        assert!(ta.len() >= 2, "{cmd} wrote {ta:?}");
        assert_eq!(ta, tree(&b), "{cmd} output differs between runs");
    }
    let serial = t.path().join("xval_serial");
    ok(&["xval", "--manifest", s(&m), "--config", s(&cfg), "--serial", "--out", s(&serial)]);
    assert_eq!(
        fs::read(serial.join("report.json")).unwrap(),
        fs::read(t.path().join("xval_a/report.json")).unwrap()
    );
}

#[test]
fn train_decode_eval() {
    let t = TempDir::new().unwrap();
    let m = corpus(t.path());
    let cfg = t.path().join("exp.json");
    fs::write(&cfg, r#"{"train_splits": ["fold00", "fold01"], "test_splits": ["fold02"]}"#).unwrap();
    let tr = t.path().join("tr");
    let dec = t.path().join("dec");
    let conv = t.path().join("conv");
    ok(&["train", "--manifest", s(&m), "--config", s(&cfg), "--out", s(&tr)]);
    ok(&["decode", "--manifest", s(&m), "--config", s(&cfg), "--bundle", s(&tr.join("bundle.json")), "--out", s(&dec)]);
    ok(&["convert", "--manifest", s(&m), "--out", s(&conv)]);
    let n = fs::read_dir(dec.join("pred")).unwrap().count();
    assert_eq!(n, 4, "two test utterances with aol and rol");
    let ev = t.path().join("ev");
    let pred = format!("rs={}", s(&dec.join("pred")));
    ok(&["eval", "--pred", &pred, "--truth", s(&conv.join("labels")), "--out", s(&ev)]);
    let table = fs::read_to_string(ev.join("table.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("rs,uar,")));
    assert!(table.lines().any(|l| l.starts_with("ranking,tau,")));
}

#[test]
fn eval_against_itself_is_perfect() {
    let t = TempDir::new().unwrap();
    let m = corpus(t.path());
    let conv = t.path().join("conv");
    ok(&["convert", "--manifest", s(&m), "--out", s(&conv)]);
    let labels = conv.join("labels");
    let ev = t.path().join("ev");
    let cfg = t.path().join("exp.json");
    fs::write(&cfg, r#"{"tau_variant": "b"}"#).unwrap();
    ok(&["eval", "--pred", s(&labels), "--truth", s(&labels), "--config", s(&cfg), "--out", s(&ev)]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("report.json")).unwrap()).unwrap();
    let agg = &report["aggregate"];
    assert!((agg["variants"]["prediction"]["uar"]["mean"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert!((agg["variants"]["prediction"]["kappa"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((agg["ranking"]["tau"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((agg["ranking"]["p@10"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn sweep_writes_seven_rows() {
    let t = TempDir::new().unwrap();
    let m = corpus(t.path());
    let out = t.path().join("sw");
    ok(&["sweep", "--manifest", s(&m), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows[0].starts_with("0.08,") && rows[6].starts_with("0.2,"));
}

#[test]
fn missing_annotation_file_is_a_user_error() {
    let t = TempDir::new().unwrap();
    let m = corpus(t.path());
    let victim = m.parent().unwrap().join("annotations/utt003.csv");
    fs::remove_file(&victim).unwrap();
    let out = domm(&["convert", "--manifest", s(&m), "--out", s(&t.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("utt003.csv"));
}

#[test]
fn empty_split_is_a_user_error() {
    let t = TempDir::new().unwrap();
    let m = corpus(t.path());
    let cfg = t.path().join("exp.json");
    fs::write(&cfg, r#"{"train_splits": ["nope"]}"#).unwrap();
    let out = domm(&["train", "--manifest", s(&m), "--config", s(&cfg), "--out", s(&t.path().join("tr"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_and_missing_manifest_exit_two() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("exp.json");
    fs::write(&cfg, r#"{"not_a_field": 1}"#).unwrap();
    let out = domm(&["xval", "--manifest", "x.json", "--config", s(&cfg), "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = domm(&["convert", "--manifest", s(&t.path().join("absent.json")), "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = domm(&["train", "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
}
