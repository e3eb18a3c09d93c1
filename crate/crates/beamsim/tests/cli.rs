use std::path::Path;
use std::process::{Command, Output};

fn beamsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamsim"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to run beamsim")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn small_dataset(dir: &Path) {
    std::fs::write(dir.join("cfg.json"), r#"{"ue_count": 40, "seed": 3}"#).unwrap();
    ok(&beamsim(&["scenario", "gen", "--config", "cfg.json", "--out", "s.json"], dir));
    ok(&beamsim(
        &["dataset", "build", "--scenario", "s.json", "--coarse", "4x4", "--fine", "8x8", "--snr", "10", "--out", "ds"],
        dir,
    ));
}

#[test]
fn pipeline_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    ok(&beamsim(
        &["train", "--dataset", "ds", "--epochs", "1", "--batch-size", "8", "--feature-dim", "4", "--out", "m.ck", "--history", "h.csv"],
        d,
    ));
    let history = std::fs::read_to_string(d.join("h.csv")).unwrap();
    assert!(history.starts_with("epoch,lr,j_pos,j_bm,j_adv,j_auto,val_top1\n"));
    assert_eq!(history.lines().count(), 2);

    ok(&beamsim(&["eval", "--policy", "model", "--dataset", "ds", "--ckpt", "m.ck", "--out", "m.csv"], d));
    ok(&beamsim(&["eval", "--policy", "hc", "--dataset", "ds", "--out", "hc.json", "--traces", "t.jsonl"], d));
    let traces = std::fs::read_to_string(d.join("t.jsonl")).unwrap();
    assert!(traces.lines().count() >= 1);

    let stdout = beamsim(&["eval", "--policy", "exhaustive", "--dataset", "ds", "--split", "all"], d);
    ok(&stdout);
    let csv = String::from_utf8(stdout.stdout).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains(",exhaustive,"));

    ok(&beamsim(&["report", "--input", "m.csv", "hc.json", "--format", "json", "--out", "all.json"], d));
    let all: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("all.json")).unwrap()).unwrap();
    assert_eq!(all.as_array().unwrap().len(), 2);
    ok(&beamsim(&["report", "--input", "all.json", "--format", "plotdata", "--out", "plots"], d));
    assert_eq!(std::fs::read_dir(d.join("plots")).unwrap().count(), 2);
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    let out = beamsim(&["scenario", "gen", "--config", "bad.json", "--out", "s.json"], d);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(d.join("neg.json"), r#"{"ue_count": 0}"#).unwrap();
    let out = beamsim(&["scenario", "gen", "--config", "neg.json", "--out", "s.json"], d);
    assert_eq!(out.status.code(), Some(2));

    let out = beamsim(&["eval", "--policy", "hc", "--dataset", "missing"], d);
    assert_eq!(out.status.code(), Some(3));

    let out = beamsim(&["eval", "--policy", "model", "--dataset", "missing"], d);
    assert_eq!(out.status.code(), Some(3));

    small_dataset(d);
    let out = beamsim(&["eval", "--policy", "model", "--dataset", "ds"], d);
    assert_eq!(out.status.code(), Some(2));

    let out = beamsim(
        &["train", "--dataset", "ds", "--epochs", "3", "--batch-size", "8", "--feature-dim", "4", "--lr", "1e200", "--warmup-epochs", "0", "--out", "m.ck"],
        d,
    );
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("m.ck").exists(), "last finite model is kept");

    let out = beamsim(&["eval", "--policy", "softmax-ref", "--dataset", "ds", "--ckpt", "m.ck"], d);
    assert_eq!(out.status.code(), Some(2));
}
