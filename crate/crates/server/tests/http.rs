use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use execeval_core::bundle::{write_bundle, Category, CodeUnit, Document, Metric, ResultsManifest, UnitKind};
use execeval_core::config::{BackendKind, RunConfig, RunMode};
use execeval_core::ResearchBundle;
use execeval_server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const PASS: &str = r#"{"verdict":"PASS","rationale":"ok"}"#;

fn bundle(dir: &Path, task_id: &str) -> PathBuf {
    let unit = |index: usize, source: &str| CodeUnit {
        index,
        kind: UnitKind::Script,
        source: source.into(),
        recorded_output: None,
        declared_inputs: vec![],
    };
    let b = ResearchBundle {
        root: PathBuf::new(),
        task_id: task_id.into(),
        category: Category::OpenEnded,
        has_demo: false,
        proposes_new_method: false,
        prompt: Some(Document::from("Measure accuracy.")),
        plan: Document::from("Compute accuracy."),
        walkthrough: None,
        report: Document::from("Accuracy is 0.9."),
        code_units: vec![unit(0, "echo computing"), unit(1, "echo METRIC accuracy=0.9")],
        data_manifest: vec![],
        recorded_results: ResultsManifest {
            metrics: vec![Metric { name: "accuracy".into(), value: 0.9 }],
            conclusions: vec![],
        },
    };
    let root = dir.join(task_id);
    write_bundle(&b, &root).unwrap();
    root
}

fn config(dir: &Path) -> RunConfig {
    let script = dir.join("judge.json");
    std::fs::write(&script, json!({"*/verdict": PASS, "*/block": PASS, "*/assess": PASS, "*/summarize": "ran"}).to_string())
        .unwrap();
    let mut cfg = RunConfig::default();
    cfg.mode = RunMode::DocOnly;
    cfg.repeats = 2;
    cfg.out = dir.join("runs");
    cfg.workspace_dir = Some(dir.join("ws"));
    cfg.judge.backend = Some(BackendKind::Scripted);
    cfg.judge.script = Some(script);
    cfg
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn health_and_checklist() {
    let app = router(AppState::default());
    let (s, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("ok")));
    let (s, v) = call(&app, "GET", "/v1/checklist", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["items"].as_array().unwrap().len(), 23);
    assert_eq!(v["items"][0]["key"], "CS1_Results_vs_Conclusion");
}

#[tokio::test]
async fn validate_reports_missing_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = bundle(dir.path(), "t1");
    let app = router(AppState::default());
    let (s, v) = call(&app, "POST", "/v1/validate", Some(json!({"bundle": root}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["valid"], true);

    std::fs::remove_file(root.join(execeval_core::bundle::REPORT_FILE)).unwrap();
    let (s, v) = call(&app, "POST", "/v1/validate", Some(json!({"bundle": root}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["kind"], "bundle");
    assert!(v["error"]["message"].as_str().unwrap().contains("report"), "{v}");
}

#[tokio::test]
async fn bad_json_is_400() {
    let app = router(AppState::default());
    let (s, v) = call(&app, "POST", "/v1/aggregate", Some(json!({"task_dir": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["kind"], "bad_request");
    let (s, v) = call(&app, "GET", "/v1/runs/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["kind"], "not_found");
}

#[tokio::test]
async fn run_then_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let root = bundle(dir.path(), "t1");
    let cfg = config(dir.path());
    let app = router(AppState::default());
    let (s, v) = call(&app, "POST", "/v1/runs", Some(json!({"bundles": [root], "config": cfg}))).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let id = v["id"].as_str().unwrap().to_string();
    let status = loop {
        let (_, v) = call(&app, "GET", &format!("/v1/runs/{id}"), None).await;
        if v["state"] != "running" {
            break v;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    };
    assert_eq!(status["state"], "succeeded", "{status}");
    let task_dir = status["summary"]["tasks"][0]["dir"].as_str().unwrap().to_string();
    let (s, v) =
        call(&app, "POST", "/v1/aggregate", Some(json!({"task_dir": task_dir, "policy": "majority"}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stability"]["runs"], 2);

    // Aggregating a directory with no runs is an input error.
    let (s, v) = call(&app, "POST", "/v1/aggregate", Some(json!({"task_dir": dir.path(), "policy": "and"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
}

#[tokio::test]
async fn run_with_missing_bundle_is_400() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let app = router(AppState::default());
    let (s, v) =
        call(&app, "POST", "/v1/runs", Some(json!({"bundles": [dir.path().join("absent")], "config": cfg}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert_eq!(v["error"]["kind"], "bundle");
}
