use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"{
    "n_pairs": 24,
    "n_cal": 10,
    "ssl": {"steps": 4, "batch": 4},
    "localiser": {"epochs": 1, "batch": 8},
    "localiser_labels": ["supervised"]
}"#;

fn rvl(cmd: &str, config: &Path, out: &Path, seed: u64) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvl"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", &seed.to_string()])
        .output()
        .expect("spawn rvl")
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_records_and_index_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"n_pairs": 4}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = rvl("synth", &cfg, out, 11);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let ds = a.join("dataset");
    let dirs = fs::read_dir(&ds).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 4);
    let index: serde_json::Value = serde_json::from_slice(&fs::read(ds.join("index.json")).unwrap()).unwrap();
    assert_eq!(index["count"], 4);
    assert!(a.join("config.synth.json").exists());
    assert_eq!(tree(&ds), tree(&b.join("dataset")));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let unknown = write_config(tmp.path(), "u.json", r#"{"n_pairz": 4}"#);
    let o = rvl("synth", &unknown, &out, 0);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_pairz"), "{}", stderr(&o));

    let invalid = write_config(tmp.path(), "i.json", r#"{"ssl": {"batch": 1}}"#);
    let o = rvl("synth", &invalid, &out, 0);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ssl.batch"), "{}", stderr(&o));

    let o = rvl("synth", &tmp.path().join("missing.json"), &out, 0);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_prior_stage_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let o = rvl("train-backbone", &cfg, &tmp.path().join("empty"), 0);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("rvl synth"), "{}", stderr(&o));
}

#[test]
fn single_method_eval_is_one_row_and_repeatable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = tmp.path().join("run");
    for cmd in ["synth", "train-localiser", "eval"] {
        let o = rvl(cmd, &cfg, &out, 3);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    let first = fs::read_to_string(out.join("eval.csv")).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 2, "{first}");
    assert!(lines[0].starts_with("method,p50,p90"));
    assert!(lines[1].starts_with("supervised,"));

    let o = rvl("eval", &cfg, &out, 3);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(out.join("eval.csv")).unwrap(), first);
}

#[test]
fn self_supervised_stages_chain() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = tmp.path().join("run");
    for cmd in ["synth", "train-backbone", "self-label", "baseline"] {
        let o = rvl(cmd, &cfg, &out, 5);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    for f in ["backbone_mcl/ssl.json", "loss_mcl.csv", "labels_mcl.csv", "selflabel_summary.csv", "detections.csv", "labels_fusion.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let labels = fs::read_to_string(out.join("labels_mcl.csv")).unwrap();
    assert_eq!(labels.lines().count(), 25);
}
