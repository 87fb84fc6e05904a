use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cxr_core::embedding_store::{DatasetManifest, EmbeddingMatrix};
use serde_json::{json, Value};

fn cxr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cxr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    cxr(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Synthetic data, a trained probe, a stub grounding table and an agent
/// config pointing at all three.
fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let ws = Workspace { _dir: dir, root };
    let (m, e, w) = (ws.path("data.json"), ws.path("data.cxre"), ws.path("probe.cxrp"));
    ok(&[
        "probe",
        "synth",
        "--manifest",
        s(&m),
        "--embeddings",
        s(&e),
        "--rows",
        "200",
        "--dim",
        "12",
        "--seed",
        "3",
    ]);
    ok(&[
        "probe",
        "train",
        "--manifest",
        s(&m),
        "--embeddings",
        s(&e),
        "--out",
        s(&w),
        "--optimizer",
        "adam",
        "--lr",
        "0.05",
        "--epochs",
        "30",
        "--batch-size",
        "32",
    ]);

    let manifest = DatasetManifest::load(&m).unwrap();
    let mut stub = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let left = if i % 2 == 0 { 0.8 } else { 0.2 };
        stub.push(json!({"image_id": r.image_id, "phrase": "left pleural effusion", "max_activation": left, "centroid_x_fraction": 0.3}));
        stub.push(json!({"image_id": r.image_id, "phrase": "right pleural effusion", "max_activation": 1.0 - left, "centroid_x_fraction": 0.7}));
    }
    std::fs::write(ws.path("stub.json"), serde_json::to_string(&stub).unwrap()).unwrap();
    std::fs::write(
        ws.path("agent.toml"),
        "probe_weights = \"probe.cxrp\"\nengine_id = \"template\"\n\n[grounding]\nkind = \"stub\"\nfixture = \"stub.json\"\n",
    )
    .unwrap();
    ws
}

fn first_embedding(ws: &Workspace) -> (String, PathBuf) {
    let manifest = DatasetManifest::load(ws.path("data.json")).unwrap();
    let m = EmbeddingMatrix::load(ws.path("data.cxre")).unwrap();
    let path = ws.path("one.json");
    std::fs::write(&path, serde_json::to_string(m.row(0)).unwrap()).unwrap();
    (manifest.records[0].image_id.clone(), path)
}

#[test]
fn probe_eval_and_grid() {
    let ws = workspace();
    let (m, e) = (ws.path("data.json"), ws.path("data.cxre"));
    let ev: Value = serde_json::from_str(&ok(&[
        "probe",
        "eval",
        "--weights",
        s(&ws.path("probe.cxrp")),
        "--manifest",
        s(&m),
        "--embeddings",
        s(&e),
        "--json",
    ]))
    .unwrap();
    assert!(ev["accuracy"]["overall"].as_f64().unwrap() > 0.8, "{ev}");
    assert!(ev["auc"]["macro_average"].as_f64().unwrap() > 0.9);

    let space = ws.path("space.json");
    std::fs::write(
        &space,
        r#"{"batch_sizes": [32, 64], "epochs_options": [5], "learning_rates": [0.01, 0.05]}"#,
    )
    .unwrap();
    let best = ws.path("best.cxrp");
    let grid: Value = serde_json::from_str(&ok(&[
        "probe",
        "grid",
        "--manifest",
        s(&m),
        "--embeddings",
        s(&e),
        "--space",
        s(&space),
        "--optimizer",
        "adam",
        "--out",
        s(&best),
        "--json",
    ]))
    .unwrap();
    assert_eq!(grid["leaderboard"].as_array().unwrap().len(), 4);
    assert!(best.exists());

    let seq = ok(&[
        "--sequential",
        "probe",
        "grid",
        "--manifest",
        s(&m),
        "--embeddings",
        s(&e),
        "--space",
        s(&space),
        "--optimizer",
        "adam",
        "--json",
    ]);
    let seq: Value = serde_json::from_str(&seq).unwrap();
    assert_eq!(seq["leaderboard"], grid["leaderboard"]);
}

#[test]
fn agent_run_and_trace() {
    let ws = workspace();
    let (id, emb) = first_embedding(&ws);
    let cfg = ws.path("agent.toml");
    let text = ok(&[
        "agent",
        "run",
        "--config",
        s(&cfg),
        "--image-id",
        &id,
        "--embedding",
        s(&emb),
    ]);
    assert!(!text.trim().is_empty());

    let out: Value = serde_json::from_str(&ok(&[
        "agent",
        "run",
        "--config",
        s(&cfg),
        "--image-id",
        &id,
        "--embedding",
        s(&emb),
        "--prompt",
        "list",
        "--json-trace",
    ]))
    .unwrap();
    assert_eq!(out["trace"]["image_id"], id.as_str());
    assert_eq!(out["report"]["text"].as_str().unwrap().trim(), text.trim());
    assert_eq!(out["report"]["engine_id"], "template");
}

#[test]
fn agent_batch_writes_one_file_per_scan() {
    let ws = workspace();
    let out = ws.path("reports");
    let job = ws.path("batch.json");
    std::fs::write(
        &job,
        json!({"config": "agent.toml", "dataset": "data.json", "embeddings": "data.cxre", "image_ids": ["syn-00000", "syn-00007"]})
            .to_string(),
    )
    .unwrap();
    ok(&["agent", "batch", "--manifest", s(&job), "--out", s(&out)]);
    for id in ["syn-00000", "syn-00007"] {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(out.join(format!("{id}.json"))).unwrap()).unwrap();
        assert_eq!(v["trace"]["image_id"], id);
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["succeeded"], 2);
}

#[test]
fn localisation_bench() {
    let ws = workspace();
    let cases: Vec<Value> = (0..10)
        .map(|i| {
            json!({
                "question": "Which side is the effusion on?",
                "option_1": "left pleural effusion",
                "option_2": "right pleural effusion",
                "image_ref": format!("syn-{i:05}"),
                "answer": if i % 2 == 0 { 1 } else { 2 },
            })
        })
        .collect();
    let path = ws.path("cases.json");
    std::fs::write(&path, serde_json::to_string(&cases).unwrap()).unwrap();
    let stub = ws.path("stub.json");
    let r: Value = serde_json::from_str(&ok(&[
        "bench",
        "localisation",
        "--cases",
        s(&path),
        "--strategy",
        "two-option",
        "--fixture",
        s(&stub),
        "--json",
    ]))
    .unwrap();
    assert_eq!(r["correct"], 10);
    assert_eq!(r["accuracy_overall"], 1.0);
    let text = ok(&[
        "bench",
        "localisation",
        "--cases",
        s(&path),
        "--strategy",
        "position",
        "--fixture",
        s(&stub),
    ]);
    assert!(text.contains("accuracy"));
}

#[test]
fn eval_import_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("eval.jsonl");
    let cases = dir.path().join("cases.json");
    std::fs::write(
        &cases,
        json!([{
            "case_id": "c1", "image_uri": "c1.png", "dataset_tag": "mimic",
            "candidates": [{"model_id": "a", "text": "x"}, {"model_id": "b", "text": "y"}]
        }])
        .to_string(),
    )
    .unwrap();
    assert!(ok(&["eval", "import", "--log", s(&log), "--cases", s(&cases)]).contains("imported 1"));
    // No submissions yet.
    assert_eq!(code(&["eval", "export", "--log", s(&log)]), 4);
}

#[test]
fn exit_codes() {
    let ws = workspace();
    let (id, emb) = first_embedding(&ws);
    let cfg = ws.path("agent.toml");
    assert_eq!(code(&["agent", "frobnicate"]), 2);
    assert_eq!(
        code(&[
            "bench",
            "localisation",
            "--cases",
            "x.json",
            "--strategy",
            "sideways",
            "--fixture",
            "f"
        ]),
        2
    );

    let missing = ws.path("nope.json");
    assert_eq!(
        code(&[
            "agent",
            "run",
            "--config",
            s(&cfg),
            "--image-id",
            &id,
            "--embedding",
            s(&missing)
        ]),
        1
    );

    let bad = ws.path("bad.json");
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(
        code(&[
            "agent",
            "run",
            "--config",
            s(&cfg),
            "--image-id",
            &id,
            "--embedding",
            s(&bad)
        ]),
        3
    );

    let other = ws.path("other.toml");
    std::fs::write(
        &other,
        "probe_weights = \"probe.cxrp\"\nengine_id = \"unregistered\"\n\n[grounding]\nkind = \"stub\"\nfixture = \"stub.json\"\n",
    )
    .unwrap();
    assert_eq!(
        code(&[
            "agent",
            "run",
            "--config",
            s(&other),
            "--image-id",
            &id,
            "--embedding",
            s(&emb)
        ]),
        4
    );

    // The grounding backend has never seen this scan.
    let cases = ws.path("ghost.json");
    std::fs::write(
        &cases,
        json!([{"question": "Which side?", "option_1": "left pleural effusion", "option_2": "right pleural effusion",
                "image_ref": "ghost", "answer": 1}])
        .to_string(),
    )
    .unwrap();
    let stub = ws.path("stub.json");
    assert_eq!(
        code(&[
            "bench",
            "localisation",
            "--cases",
            s(&cases),
            "--strategy",
            "two-option",
            "--fixture",
            s(&stub)
        ]),
        5
    );
}
