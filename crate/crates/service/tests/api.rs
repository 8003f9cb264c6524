use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pmsys_core::model::{train_forest, FeatureRow};
use pmsys_core::traits::QuestionnaireDef;
use pmsys_core::{FeatureSchema, ForestParams, SystemStatus};
use pmsys_service::{router, ServiceConfig};
use serde_json::{json, Value};
use std::time::Duration;
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Value,
    text: String,
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    Reply {
        status,
        headers,
        body: serde_json::from_str(&text).unwrap_or(Value::Null),
        text,
    }
}

fn items() -> usize {
    QuestionnaireDef::bundled().items().len()
}

async fn create(app: &Router, age: f64) -> String {
    let r = call(app, Method::POST, "/api/session", Some(json!({ "age": age }))).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    r.body["session_id"].as_str().unwrap().to_string()
}

fn sliders(step: usize) -> Value {
    match step {
        1 => json!({ "anger": 1.0, "disgust": 0.0, "fear": 0.0, "joy": 0.0, "sadness": 0.0 }),
        2 => json!({ "anger": 0.0, "disgust": 0.0, "fear": 0.0, "joy": 0.0, "sadness": 0.0 }),
        3 => json!({ "anger": 0.4, "disgust": 0.6, "fear": 0.0, "joy": 0.0, "sadness": 0.0 }),
        _ => json!({ "anger": 0.2, "disgust": 0.2, "fear": 0.1, "joy": 0.9, "sadness": 0.1 }),
    }
}

/// Drives one step through save (waiting out a Down window) and emotion.
async fn run_step(app: &Router, id: &str, config: &ServiceConfig) -> (usize, SystemStatus) {
    let ev = call(app, Method::GET, &format!("/api/session/{id}/event"), None).await;
    assert_eq!(ev.status, StatusCode::OK, "{}", ev.text);
    let step = ev.body["step"].as_u64().unwrap() as usize;
    let status: SystemStatus = serde_json::from_value(ev.body["status"].clone()).unwrap();
    let save_uri = format!("/api/session/{id}/save");
    let save = call(app, Method::POST, &save_uri, Some(json!({ "step": step, "answer": "x" }))).await;
    match status {
        SystemStatus::Idle => assert_eq!(save.status, StatusCode::OK),
        SystemStatus::Slow => {
            assert_eq!(save.status, StatusCode::OK);
            assert!(save.body["server_ms"].as_f64().unwrap() >= config.slow_delay.as_millis() as f64);
        }
        SystemStatus::Error => {
            assert_eq!(save.status, StatusCode::INTERNAL_SERVER_ERROR);
            assert!(save.body["error"].is_string());
        }
        SystemStatus::Down => {
            assert_eq!(save.status, StatusCode::SERVICE_UNAVAILABLE);
            assert!(save.headers.contains_key("retry-after"));
            tokio::time::sleep(config.down_window).await;
            let again = call(app, Method::POST, &save_uri, Some(json!({ "step": step }))).await;
            assert_eq!(again.status, StatusCode::OK);
            assert_eq!(again.body["outcome"], "recovered");
        }
    }
    let em = call(
        app,
        Method::POST,
        &format!("/api/session/{id}/emotion"),
        Some(json!({ "step": step, "sliders": sliders(step), "latency_ms": 1500.0 })),
    )
    .await;
    assert_eq!(em.status, StatusCode::OK, "{}", em.text);
    let sum: f64 = ["anger", "disgust", "fear", "joy", "sadness"]
        .iter()
        .map(|k| em.body["emotions"][k].as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9);
    (step, status)
}

async fn complete(app: &Router, id: &str, config: &ServiceConfig) -> Vec<SystemStatus> {
    let q = call(
        app,
        Method::POST,
        &format!("/api/session/{id}/questionnaire"),
        Some(json!({ "responses": vec![3; items()] })),
    )
    .await;
    assert_eq!(q.status, StatusCode::OK, "{}", q.text);
    let mut order = Vec::new();
    for want in 1..=4 {
        let (step, status) = run_step(app, id, config).await;
        assert_eq!(step, want);
        order.push(status);
    }
    order
}

#[tokio::test(start_paused = true)]
async fn full_session_exports_four_labeled_rows() {
    let config = ServiceConfig::default();
    let app = router(config.clone()).unwrap();
    let id = create(&app, 24.0).await;
    let order = complete(&app, &id, &config).await;
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(sorted, SystemStatus::ALL);

    let fifth = call(&app, Method::GET, &format!("/api/session/{id}/event"), None).await;
    assert_eq!(fifth.status, StatusCode::CONFLICT);

    let ex = call(&app, Method::GET, "/api/export", None).await;
    assert_eq!(ex.status, StatusCode::OK);
    let rows = ex.body["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let names: Vec<String> = serde_json::from_value(ex.body["schema"].clone()).unwrap();
    assert_eq!(names, FeatureSchema::default().names());
    for (i, row) in rows.iter().enumerate() {
        let label: SystemStatus = serde_json::from_value(row["label"].clone()).unwrap();
        assert_eq!(label, order[i]);
        let v: Vec<f64> = serde_json::from_value(row["values"].clone()).unwrap();
        // conscientiousness, agreeableness, neuroticism at the scale midpoint; age
        assert_eq!(&v[4..], &[0.5, 0.5, 0.5, 24.0]);
    }
    let v1: Vec<f64> = serde_json::from_value(rows[0]["values"].clone()).unwrap();
    assert_eq!(&v1[..4], &[1.0, 0.0, 0.0, 0.0]);
    let v2: Vec<f64> = serde_json::from_value(rows[1]["values"].clone()).unwrap();
    assert_eq!(&v2[..4], &[0.2; 4]);
    let v3: Vec<f64> = serde_json::from_value(rows[2]["values"].clone()).unwrap();
    assert!((v3[0] - 0.4).abs() < 1e-12 && (v3[1] - 0.6).abs() < 1e-12);
    assert!(ex.body.get("warning").is_none());
}

#[tokio::test(start_paused = true)]
async fn replays_are_idempotent() {
    let config = ServiceConfig::default();
    let app = router(config.clone()).unwrap();
    let id = create(&app, 31.0).await;
    let quri = format!("/api/session/{id}/questionnaire");
    let body = json!({ "responses": vec![3; items()] });
    let a = call(&app, Method::POST, &quri, Some(body.clone())).await;
    let b = call(&app, Method::POST, &quri, Some(body)).await;
    assert_eq!((a.status, &a.body["traits"]), (b.status, &b.body["traits"]));
    let c = call(&app, Method::POST, &quri, Some(json!({ "responses": vec![4; items()] }))).await;
    assert_eq!(c.status, StatusCode::CONFLICT);

    let (step, _) = run_step(&app, &id, &config).await;
    let euri = format!("/api/session/{id}/emotion");
    let again = call(&app, Method::POST, &euri, Some(json!({ "step": step, "sliders": sliders(step), "latency_ms": 1500.0 }))).await;
    assert_eq!(again.status, StatusCode::OK);
    let changed = call(&app, Method::POST, &euri, Some(json!({ "step": step, "sliders": sliders(step + 1) }))).await;
    assert_eq!(changed.status, StatusCode::CONFLICT);

    // The finished step's save replays its stored outcome.
    let s1 = call(&app, Method::POST, &format!("/api/session/{id}/save"), Some(json!({ "step": 1 }))).await;
    assert!(s1.body["outcome"].is_string(), "{}", s1.text);

    for _ in 2..=4 {
        let (step, _) = run_step(&app, &id, &config).await;
        let dup = call(&app, Method::POST, &euri, Some(json!({ "step": step, "sliders": sliders(step), "latency_ms": 1500.0 }))).await;
        assert_eq!(dup.status, StatusCode::OK);
    }
    let ex = call(&app, Method::GET, "/api/export", None).await;
    assert_eq!(ex.body["rows"].as_array().unwrap().len(), 4);
}

#[tokio::test(start_paused = true)]
async fn rejects_invalid_requests() {
    let app = router(ServiceConfig::default()).unwrap();
    let r = call(&app, Method::POST, "/api/session", Some(json!({ "age": 0 }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.body["error"].is_string());
    let r = call(&app, Method::GET, "/api/session/nope/event", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let id = create(&app, 20.0).await;
    let r = call(&app, Method::GET, &format!("/api/session/{id}/event"), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let mut bad = vec![3; items()];
    bad[2] = 6;
    let r = call(&app, Method::POST, &format!("/api/session/{id}/questionnaire"), Some(json!({ "responses": bad }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = call(&app, Method::POST, &format!("/api/session/{id}/questionnaire"), Some(json!({ "responses": [3, 3] }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    call(&app, Method::POST, &format!("/api/session/{id}/questionnaire"), Some(json!({ "responses": vec![3; items()] }))).await;

    let euri = format!("/api/session/{id}/emotion");
    let r = call(&app, Method::POST, &euri, Some(json!({ "step": 1, "sliders": sliders(1) }))).await;
    assert_eq!(r.status, StatusCode::CONFLICT, "emotion before save");
    let r = call(&app, Method::POST, &format!("/api/session/{id}/save"), Some(json!({ "step": 2 }))).await;
    assert_eq!(r.status, StatusCode::CONFLICT, "skipped step");
    call(&app, Method::POST, &format!("/api/session/{id}/save"), Some(json!({ "step": 1 }))).await;
    let over = json!({ "anger": 1.2, "disgust": 0.0, "fear": 0.0, "joy": 0.0, "sadness": 0.0 });
    let r = call(&app, Method::POST, &euri, Some(json!({ "step": 1, "sliders": over }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = call(&app, Method::POST, &euri, Some(json!({ "step": 2, "sliders": sliders(1) }))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let r = call(&app, Method::GET, "/api/export?format=xml", None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(start_paused = true)]
async fn seed_fixes_ids_and_orders() {
    let config = ServiceConfig {
        seed: 99,
        ..ServiceConfig::default()
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let app = router(config.clone()).unwrap();
        let a = create(&app, 30.0).await;
        let b = create(&app, 30.0).await;
        assert_ne!(a, b);
        let oa = complete(&app, &a, &config).await;
        runs.push((a, b, oa));
    }
    assert_eq!(runs[0], runs[1]);
}

#[tokio::test(start_paused = true)]
async fn slow_save_does_not_block_other_requests() {
    let config = ServiceConfig::default();
    let app = router(config.clone()).unwrap();
    // Find a session whose first event is Slow.
    let id = loop {
        let id = create(&app, 30.0).await;
        call(&app, Method::POST, &format!("/api/session/{id}/questionnaire"), Some(json!({ "responses": vec![3; items()] }))).await;
        let ev = call(&app, Method::GET, &format!("/api/session/{id}/event"), None).await;
        if ev.body["status"] == "Slow" {
            break id;
        }
    };
    let app2 = app.clone();
    let uri = format!("/api/session/{id}/save");
    let slow = tokio::spawn(async move { call(&app2, Method::POST, &uri, Some(json!({ "step": 1 }))).await });
    tokio::task::yield_now().await;
    let start = tokio::time::Instant::now();
    let view = call(&app, Method::GET, &format!("/api/session/{id}"), None).await;
    assert_eq!(view.status, StatusCode::OK);
    assert_eq!(view.body["saved_steps"], json!([1]));
    assert!(start.elapsed() < Duration::from_millis(100));
    let done = slow.await.unwrap();
    assert_eq!(done.status, StatusCode::OK);
}

#[tokio::test(start_paused = true)]
async fn export_excludes_incomplete_and_warns_when_empty() {
    let config = ServiceConfig::default();
    let app = router(config.clone()).unwrap();
    let empty = call(&app, Method::GET, "/api/export", None).await;
    assert_eq!(empty.body["rows"], json!([]));
    assert!(empty.body["warning"].is_string());
    let csv = call(&app, Method::GET, "/api/export?format=csv", None).await;
    assert!(csv.headers.contains_key("x-pmsys-warning"));
    assert_eq!(csv.text.lines().count(), 1);

    let ids = [create(&app, 21.0).await, create(&app, 35.0).await, create(&app, 48.0).await];
    complete(&app, &ids[0], &config).await;
    complete(&app, &ids[2], &config).await;
    call(&app, Method::POST, &format!("/api/session/{}/questionnaire", ids[1]), Some(json!({ "responses": vec![3; items()] }))).await;
    run_step(&app, &ids[1], &config).await;

    let ex = call(&app, Method::GET, "/api/export", None).await;
    let rows = ex.body["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(ex.body["sessions"], 2);
    assert!(rows.iter().all(|r| r["session_id"] != ids[1].as_str()));
    let one = call(&app, Method::GET, &format!("/api/export?session={}", ids[2]), None).await;
    assert_eq!(one.body["rows"].as_array().unwrap().len(), 4);

    // CSV is loadable as a feature table.
    let csv = call(&app, Method::GET, "/api/export?format=csv", None).await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    std::fs::write(&path, &csv.text).unwrap();
    let table = pmsys_core::ingest::load_features(&path, &FeatureSchema::default()).unwrap();
    assert_eq!(table.rows.len(), 8);
    assert!(table.rows.iter().all(|r| r.label.is_some()));
}

#[tokio::test(start_paused = true)]
async fn export_scores_against_loaded_model() {
    let schema = FeatureSchema::default();
    let mut rows = Vec::new();
    for (k, label) in SystemStatus::ALL.into_iter().enumerate() {
        for i in 0..10 {
            let a = 0.1 + 0.2 * k as f64;
            rows.push(FeatureRow {
                values: vec![a, a, a, a, 0.5, 0.5, 0.5, 20.0 + i as f64],
                label: Some(label),
            });
        }
    }
    let forest = train_forest(&rows, &schema, &ForestParams { n_trees: 15, ..Default::default() }).unwrap();
    let config = ServiceConfig {
        model: Some(forest),
        ..ServiceConfig::default()
    };
    let app = router(config.clone()).unwrap();
    let id = create(&app, 27.0).await;
    complete(&app, &id, &config).await;
    let ex = call(&app, Method::GET, "/api/export", None).await;
    let rows = ex.body["rows"].as_array().unwrap();
    assert!(rows.iter().all(|r| r["predicted"].is_string()));
    for r in rows {
        let d: Vec<f64> = serde_json::from_value(r["distribution"].clone()).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(ex.body["report"]["instances"], 4);
    let csv = call(&app, Method::GET, "/api/export?format=csv", None).await;
    assert!(csv.text.lines().next().unwrap().ends_with(",label,predicted"));
}

#[tokio::test(start_paused = true)]
async fn log_replay_restores_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        store_path: Some(dir.path().join("sessions.jsonl")),
        ..ServiceConfig::default()
    };
    let app = router(config.clone()).unwrap();
    let id = create(&app, 33.0).await;
    call(&app, Method::POST, &format!("/api/session/{id}/questionnaire"), Some(json!({ "responses": vec![2; items()] }))).await;
    run_step(&app, &id, &config).await;
    run_step(&app, &id, &config).await;
    let before = call(&app, Method::GET, &format!("/api/session/{id}"), None).await;
    drop(app);

    let app = router(config.clone()).unwrap();
    let after = call(&app, Method::GET, &format!("/api/session/{id}"), None).await;
    assert_eq!(before.body, after.body);
    run_step(&app, &id, &config).await;
    run_step(&app, &id, &config).await;
    let other = create(&app, 40.0).await;
    assert_ne!(other, id);
    let ex = call(&app, Method::GET, "/api/export", None).await;
    assert_eq!(ex.body["rows"].as_array().unwrap().len(), 4);

    let reseeded = ServiceConfig {
        seed: 2,
        ..config
    };
    assert!(router(reseeded).is_err());
}

#[tokio::test]
async fn questionnaire_definition_is_served() {
    let app = router(ServiceConfig::default()).unwrap();
    let r = call(&app, Method::GET, "/api/questionnaire", None).await;
    assert_eq!(r.body["items"].as_array().unwrap().len(), items());
    assert_eq!(r.body["scale"], json!({ "min": 1, "max": 5 }));
}

#[tokio::test]
async fn static_bundle_is_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    let app = router(ServiceConfig {
        static_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    })
    .unwrap();
    let r = call(&app, Method::GET, "/", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.text.contains("<title>ui</title>"));
    let api = call(&app, Method::GET, "/api/questionnaire", None).await;
    assert_eq!(api.status, StatusCode::OK);
}

#[test]
fn unknown_schema_feature_is_refused() {
    let config = ServiceConfig {
        schema: FeatureSchema::parse("anger,income").unwrap(),
        ..ServiceConfig::default()
    };
    assert!(router(config).is_err());
}
