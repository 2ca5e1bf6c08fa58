mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{assign_fixed_splits, fixtures, two_layer_records};
use sqa_core::data::write_manifest;

fn sqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqa")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let feats = dir.join("feats");
    fs::create_dir_all(&feats).unwrap();
    let mut records = two_layer_records(&feats, 24, 5, 21, 3);
    assign_fixed_splits(&mut records, 4);
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &records).unwrap();
    let config = dir.join("run.cfg");
    fs::write(
        &config,
        "# tiny\nfeatures = 5\nhidden = 4\nencoder_layers = 1\nepochs = 3\nbatch_size = 8\nprobe_grid = bilstm:4:1\n",
    )
    .unwrap();
    (manifest, config)
}

#[test]
fn human_metrics_prints_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h");
    let o = sqa(&[
        "human-metrics",
        "--manifest",
        s(&fixtures().join("human_two_samples.jsonl")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("rmse_human=0.6325"), "{stdout}");
    for f in ["human_metrics.tsv", "human_metrics.jsonl", "run.json", "metadata.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn train_then_evaluate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, config) = setup(dir.path());
    let out = dir.path().join("run");
    let files = [
        "model.sqac",
        "train_log.jsonl",
        "splits.jsonl",
        "eval/report.tsv",
        "eval/predictions.tsv",
    ];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let o = sqa(&[
            "train",
            "--manifest",
            s(&manifest),
            "--config",
            s(&config),
            "--seed",
            "7",
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let o = sqa(&[
            "evaluate",
            "--manifest",
            s(&manifest),
            "--config",
            s(&config),
            "--checkpoint",
            s(&out.join("model.sqac")),
            "--out",
            s(&out.join("eval")),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        snapshots.push(files.map(|f| fs::read(out.join(f)).unwrap()));
    }
    for (i, f) in files.iter().enumerate() {
        assert!(snapshots[0][i] == snapshots[1][i], "{f} differs between runs");
    }
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 7);
}

#[test]
fn probe_reports_unreadable_layers_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, config) = setup(dir.path());
    fs::remove_file(dir.path().join("feats").join("r3_l21.sqaf")).unwrap();
    let out = dir.path().join("p");
    let o = sqa(&[
        "probe",
        "--manifest",
        s(&manifest),
        "--config",
        s(&config),
        "--layers",
        "5,21",
        "--out",
        s(&out),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tsv = fs::read_to_string(out.join("probe.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert!(lines[0].starts_with("layer\t"), "{tsv}");
    let row21 = lines.iter().find(|l| l.starts_with("21\t")).expect("row for layer 21");
    assert!(row21.contains("r3"), "error row should name the record: {row21}");
    assert!(lines.iter().any(|l| l.starts_with("5\t")));
    assert!(out.join("probe_optima.tsv").exists() && out.join("probe_interpolated.tsv").exists());
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    assert_eq!(sqa(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(sqa(&["train"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    let o = sqa(&[
        "human-metrics",
        "--manifest",
        s(&bad),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let o = sqa(&[
        "human-metrics",
        "--manifest",
        s(&bad),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
