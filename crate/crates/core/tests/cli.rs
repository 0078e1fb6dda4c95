//! End-to-end run of every CLI verb against a scratch store.

use std::path::Path;
use std::process::{Command, Output};

fn fmlab(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmlab"))
        .arg("--store")
        .arg(store)
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(store: &Path, args: &[&str]) -> String {
    let out = fmlab(store, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn key(store: &Path, args: &[&str]) -> String {
    ok(store, args).trim().to_string()
}

#[test]
fn verbs_chain_through_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path();
    let csv = dir.path().join("ds.csv");
    let ds = key(
        store,
        &["dataset", "gen", "--name", "eight-gaussians", "--n", "512", "--csv", csv.to_str().unwrap()],
    );
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 513);
    // Regenerating is a no-op with the same key.
    assert_eq!(ds, key(store, &["dataset", "gen", "--name", "eight-gaussians", "--n", "512"]));

    let sur = key(store, &["train", "--dataset", &ds, "--steps", "400", "--batch", "64", "--surrogate"]);
    let scores = key(store, &["score", "--dataset", &ds, "--surrogate", &sur, "--kind", "loss"]);
    let subset = key(
        store,
        &["prune", "--dataset", &ds, "--method", "loss-inv", "--pr", "0.5", "--scores", &scores],
    );
    let clust = key(store, &["prune", "--dataset", &ds, "--method", "clust-b", "--pr", "0.25", "--k", "8"]);
    assert_ne!(subset, clust);

    let full = key(store, &["train", "--dataset", &ds, "--steps", "300", "--batch", "64"]);
    let pruned = key(
        store,
        &["train", "--dataset", &ds, "--subset", &subset, "--steps", "300", "--batch", "64"],
    );
    let ea = key(store, &["sample", "--checkpoint", &full, "--count", "256", "--steps", "16"]);
    let eb = key(store, &["sample", "--checkpoint", &pruned, "--count", "256", "--steps", "16"]);
    let report: serde_json::Value =
        serde_json::from_str(&ok(store, &["eval", "--a", &ea, "--b", &eb, "--reference", &ds])).unwrap();
    let text = report.to_string();
    assert!(text.contains("matched_mean"), "{text}");
}

#[test]
fn experiment_and_report_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 3, "dataset": {"name": "two-moons", "n": 600},
            "train": {"steps": 200, "batch": 64},
            "eval": {"pairs": 64, "frechet_samples": 128},
            "experiment": {"kind": "disjoint-subsets"}}"#,
    )
    .unwrap();
    let store = dir.path().join("store");
    let first = ok(&store, &["experiment", "run", cfg.to_str().unwrap()]);
    assert!(first.contains("config digest"));
    let again = ok(&store, &["report", cfg.to_str().unwrap()]);
    assert!(again.contains("| subset A vs subset B |"));
}

#[test]
fn exit_codes_name_the_failure() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path();
    let missing = fmlab(store, &["train", "--dataset", "feedface", "--steps", "10"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("dataset gen"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 0, "dataset": {"name": "eight-gaussians", "n": "many"}, "experiment": {"kind": "disjoint-subsets"}}"#).unwrap();
    let out = fmlab(store, &["experiment", "run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.n"));
}
