mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn semfact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semfact")).args(args).output().expect("run semfact")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three.json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn mock_verify_writes_predictions_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = semfact(&["verify", "--input", s(&fixture()), "--backend", "mock", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let preds = read_json(&out.join("predictions.json"));
    assert_eq!(preds.as_array().unwrap().len(), 3);
    assert_eq!(preds[0]["id"], "t-001");
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["dataset"]["records"], 3);
    assert_eq!(manifest["config"]["token_budget"], 400);
    assert_eq!(manifest["failures"].as_array().unwrap().len(), 0);
}

#[test]
fn unreachable_backend_is_partial_failure() {
    let url = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = semfact(&[
        "verify", "--input", s(&fixture()), "--backend", &url, "--max-retries", "0", "--timeout-ms", "500", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let manifest = read_json(&out.join("manifest.json"));
    let failures = manifest["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 3);
    assert!(failures[0]["error"].as_str().unwrap().starts_with("backend unavailable"));
}

#[test]
fn bad_config_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"batch_size": 0}"#).unwrap();
    let o = semfact(&["verify", "--input", s(&fixture()), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = semfact(&["verify", "--input", "/nonexistent.json", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn faster_full_and_replay_produce_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let records = common::synthetic_corpus(40, 11);
    let data = common::write_dataset(dir.path(), "data.json", &records);
    let run = |mode: &str, jobs: &str, name: &str| {
        let out = dir.path().join(name);
        let o = semfact(&[
            "verify", "--input", s(&data), "--backend", "mock-gold", "--mode", mode, "--jobs", jobs,
            "--token-budget", "20", "--batch-size", "3", "--out", s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        out
    };
    let full = run("full", "1", "full");
    let faster = run("faster", "4", "faster");
    let again = run("full", "1", "again");
    let bytes = |d: &Path| std::fs::read(d.join("predictions.json")).unwrap();
    assert_eq!(bytes(&full), bytes(&faster));
    assert_eq!(bytes(&full), bytes(&again));

    let replay = dir.path().join("replay");
    let o = semfact(&["verify", "--replay", s(&full.join("manifest.json")), "--out", s(&replay)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(bytes(&full), bytes(&replay));
    let m = read_json(&replay.join("manifest.json"));
    assert_eq!(m["config"]["token_budget"], 20);
}

#[test]
fn eval_scores_and_rejects_mismatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    let gold = fixture();
    let preds = dir.path().join("perfect.json");
    std::fs::write(
        &preds,
        r#"[
          {"id": "t-003", "verdict": "NEI", "evidence": null},
          {"id": "t-002", "verdict": "REFUTED", "evidence": "The city lies on the banks of the Red River in the north."},
          {"id": "t-001", "verdict": "SUPPORTED", "evidence": "The Mekong Delta produces most of the country's rice."}
        ]"#,
    )
    .unwrap();
    let out = dir.path().join("eval");
    let o = semfact(&["eval", "--pred", s(&preds), "--gold", s(&gold), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("eval.json"));
    assert_eq!(report["strict_acc"], 1.0);
    assert_eq!(report["n"], 3);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Strict Acc") && stdout.contains("100.00"));

    let partial = dir.path().join("partial.json");
    std::fs::write(&partial, r#"[{"id": "t-001", "verdict": "SUPPORTED", "evidence": "x"}]"#).unwrap();
    let o = semfact(&["eval", "--pred", s(&partial), "--gold", s(&gold)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ids do not match"));

    let compare = semfact(&["compare", "--report", &format!("perfect={}", s(&out.join("eval.json")))]);
    assert!(String::from_utf8_lossy(&compare.stdout).lines().nth(1).unwrap().starts_with("perfect"));
}

#[test]
fn sweep_extremes_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let records = common::synthetic_corpus(24, 5);
    let data = common::write_dataset(dir.path(), "data.json", &records);
    let out = dir.path().join("sweep");
    let o = semfact(&[
        "sweep", "--input", s(&data), "--backend", "mock-gold", "--thresholds", "inf,0.3,-inf,0.3,0.7", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate threshold"));
    let points = read_json(&out.join("sweep.json"));
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 4);
    assert_eq!(points[0]["threshold"], "-inf");
    assert_eq!(points[0]["hard"], 0);
    assert_eq!(points[3]["threshold"], "inf");
    assert_eq!(points[3]["easy"], 0);
    let hard: Vec<u64> = points.iter().map(|p| p["hard"].as_u64().unwrap()).collect();
    assert!(hard.windows(2).all(|w| w[0] <= w[1]));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("threshold,strict_acc,vc_acc,er_acc,hard,easy,failed,wall_ms"));
}

#[test]
fn tfidf_only_mode_never_routes_hard() {
    let dir = tempfile::tempdir().unwrap();
    let records = common::synthetic_corpus(15, 3);
    let data = common::write_dataset(dir.path(), "data.json", &records);
    let out = dir.path().join("run");
    let o = semfact(&["verify", "--input", s(&data), "--backend", "mock-gold", "--mode", "tfidf-only", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let preds = read_json(&out.join("predictions.json"));
    assert_eq!(preds.as_array().unwrap().len(), 15);
}
