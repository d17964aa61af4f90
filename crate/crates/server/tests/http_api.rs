mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use predserve_core::InputType;
use predserve_server::container::{LinearThreshold, NoopModel};
use predserve_server::http::router;
use predserve_server::metrics::parse_metrics;
use predserve_server::ServerOptions;
use serde_json::{json, Value};
use tower::ServiceExt;

const BODY: &str = r#"
[app.echo]
slo_ms = 200
input_type = "string"
default_output = "none"
models = ["noop"]

[app.cls]
slo_ms = 200
input_type = "doubles"
default_output = "0"
confidence_threshold = 0.5
models = ["linear"]

[model.noop]
batch_strategy = "aimd"

[model.linear]
batch_strategy = "aimd"
"#;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn json_of(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn predict_feedback_state_and_metrics() {
    let _g = common::serial().await;
    let server = common::serve(common::config(BODY)).await;
    let _noop = common::container(&server, "noop", InputType::String, Box::new(NoopModel));
    let _lin = common::container(&server, "linear", InputType::Doubles, Box::new(LinearThreshold { weights: vec![1.0, -1.0], bias: 0.0 }));
    common::wait_for_replicas(&server, "noop", 1).await;
    common::wait_for_replicas(&server, "linear", 1).await;
    let app = router(server.frontend.clone());

    let (s, b) = call(&app, "POST", "/api/v1/predict", Some(json!({"app": "echo", "input": "hello"}))).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    let r = json_of(&b);
    assert_eq!(r["output"], "hello");
    assert_eq!(r["models_used"], 1);
    assert_eq!(r["models_missing"], 0);
    assert_eq!(r["is_default"], false);
    assert_eq!(r["confidence"], 1.0);
    assert!(r["latency_micros"].as_u64().unwrap() < 200_000);

    let (_, b) = call(&app, "POST", "/api/v1/predict", Some(json!({"app": "cls", "input": [2.0, 1.0]}))).await;
    assert_eq!(json_of(&b)["output"], "1");
    let (_, b) = call(&app, "POST", "/api/v1/predict", Some(json!({"app": "cls", "input": [1.0, 2.0]}))).await;
    assert_eq!(json_of(&b)["output"], "0");

    let (s, _) = call(&app, "POST", "/api/v1/predict", Some(json!({"app": "nope", "input": "x"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/v1/predict", Some(json!({"app": "cls", "input": "x"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/v1/predict", Some(json!({"app": "echo", "input": ""}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/api/v1/feedback", Some(json!({"app": "nope", "input": "x", "label": "y"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let fb = json!({"app": "echo", "context_id": "u1", "input": "hello", "label": "hello"});
    let (s, _) = call(&app, "POST", "/api/v1/feedback", Some(fb)).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let fe = server.frontend.clone();
    common::wait_until("feedback", Duration::from_secs(5), || fe.metrics().counter("feedback_processed_total") == 1).await;

    let (s, b) = call(&app, "GET", "/admin/state/echo/u1", None).await;
    assert_eq!(s, StatusCode::OK);
    let st = json_of(&b);
    assert_eq!(st["stored"], true);
    assert_eq!(st["query_count"], 1);
    assert_eq!(st["policy"], "exp4");
    assert_eq!(st["models"][0]["model"], "noop");
    let (_, b) = call(&app, "GET", "/admin/state/echo", None).await;
    assert_eq!(json_of(&b)["stored"], false);
    let (s, _) = call(&app, "GET", "/admin/state/nope/u1", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, b) = call(&app, "GET", "/metrics", None).await;
    assert_eq!(s, StatusCode::OK);
    let m = parse_metrics(&b);
    assert_eq!(m["predictions_total"], 3.0);
    assert_eq!(m["cache_hits"] + m["cache_misses"], m["cache_requests_total"]);
    assert_eq!(m["predict_latency_ms_count"], 3.0);
    assert!(m.keys().any(|k| k.starts_with("max_batch_size{model=\"noop\"")));

    let (_, b) = call(&app, "GET", "/admin/replicas", None).await;
    assert_eq!(json_of(&b).as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reload_applies_hot_fields_only() {
    let _g = common::serial().await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("serve.toml");
    let service = "[service]\nlisten_addr = \"127.0.0.1:0\"\ncontainer_port = 0\n";
    std::fs::write(&path, format!("{service}{BODY}")).unwrap();
    let server = common::serve_with(ServerOptions::from_file(&path).unwrap()).await;
    let app = router(server.frontend.clone());

    let edited = BODY
        .replace("confidence_threshold = 0.5", "confidence_threshold = 0.9")
        .replace("[model.linear]\nbatch_strategy = \"aimd\"", "[model.linear]\nbatch_strategy = \"aimd\"\nbatch_delay_ms = 3");
    std::fs::write(&path, format!("{service}{edited}")).unwrap();
    let (s, b) = call(&app, "POST", "/admin/reload", None).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    let r = json_of(&b);
    assert_eq!(r["confidence_thresholds"][0]["confidence_threshold"], 0.9);
    assert_eq!(r["batch_delays"][0]["model"], "linear");
    assert_eq!(r["needs_restart"], false);

    std::fs::write(&path, format!("{service}{}", edited.replace("slo_ms = 200", "slo_ms = 300"))).unwrap();
    let (_, b) = call(&app, "POST", "/admin/reload", None).await;
    assert_eq!(json_of(&b)["needs_restart"], true);

    std::fs::write(&path, "[app.x]\neta = 0\n").unwrap();
    let (s, b) = call(&app, "POST", "/admin/reload", None).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(b.contains("line"), "{b}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_containers_are_rejected() {
    let _g = common::serial().await;
    let server = common::serve(common::config(BODY)).await;
    let stray = common::container(&server, "mystery", InputType::String, Box::new(NoopModel));
    let wrong_type = common::container(&server, "noop", InputType::Ints, Box::new(NoopModel));
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert!(stray.connects() >= 1);
    assert!(wrong_type.connects() >= 1);
    assert!(server.frontend.layer().replicas().is_empty());
}
