use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vqbe_core::datagen::{generate, GenSpec};
use vqbe_core::synth::default_executor;
use vqbe_core::{parse, SegmentRecord, SegmentStore};
use vqbe_server::{router, AppState};

fn store() -> Arc<SegmentStore> {
    Arc::new(generate(&GenSpec::pairs(80, 1)))
}

fn app_state(store: &Arc<SegmentStore>) -> AppState {
    AppState::new(BTreeMap::from([("pairs".to_string(), store.clone())]))
}

/// Ground truth for the labeler: `Near(o1, o2)`.
fn truth(store: &SegmentStore) -> BTreeSet<String> {
    let ex = default_executor();
    let q = parse("Near(o1, o2)", ex.registry()).unwrap();
    ex.execute(&q, store, &store.vids().collect::<Vec<_>>()).unwrap()
}

fn label_of(truth: &BTreeSet<String>, vid: &str) -> &'static str {
    if truth.contains(vid) {
        "pos"
    } else {
        "neg"
    }
}

fn create_body(store: &SegmentStore, extra: Value) -> Value {
    let t = truth(store);
    let pos = store.vids().filter(|v| t.contains(*v)).take(2);
    let neg = store.vids().filter(|v| !t.contains(*v)).take(2);
    let labels: Vec<Value> = pos
        .map(|v| json!({"vid": v, "label": "pos"}))
        .chain(neg.map(|v| json!({"vid": v, "label": "neg"})))
        .collect();
    let mut body = json!({
        "dataset": "pairs",
        "initial_labels": labels,
        "hyper": {"b": 10, "bw": 3, "k": 5, "n_p": 2, "n_g": 2, "duration_values": [], "seed": 3},
    });
    body.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    body
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(b) => {
            req = req.header("content-type", "application/json");
            Body::from(b.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn check_schema(name: &str, value: &Value) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../api/v1").join(format!("{name}.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

/// Polls until the session is awaiting labels or done.
async fn settle(app: &Router, id: &str) -> Value {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (status, body) = call(app, "GET", &format!("/sessions/{id}/pending?wait_ms=500"), None).await;
        assert_eq!(status, StatusCode::OK);
        if body["state"] != "searching" {
            return body;
        }
        assert!(Instant::now() < deadline, "session {id} never settled");
    }
}

#[tokio::test]
async fn datasets_are_listed() {
    let s = store();
    let app = router(app_state(&s));
    let (status, body) = call(&app, "GET", "/datasets", None).await;
    assert_eq!(status, StatusCode::OK);
    check_schema("datasets.response", &body);
    assert_eq!(body, json!([{"id": "pairs", "segments": 80, "width": 480, "height": 320, "frame_count": 128}]));
}

#[tokio::test]
async fn creation_errors() {
    let s = store();
    let app = router(app_state(&s));
    let mut body = create_body(&s, json!({}));
    check_schema("create_session.request", &body);

    body["dataset"] = json!("nope");
    let (status, err) = call(&app, "POST", "/sessions", Some(body.clone())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    check_schema("error", &err);

    let mut all_pos = create_body(&s, json!({}));
    for l in all_pos["initial_labels"].as_array_mut().unwrap() {
        l["label"] = json!("pos");
    }
    let (status, err) = call(&app, "POST", "/sessions", Some(all_pos)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "precondition");

    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"dataset": "pairs"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/sessions", Some(create_body(&s, json!({"hyper": {"b": 2}})))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "GET", "/sessions/s99/pending", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn full_labeling_session() {
    let s = store();
    let t = truth(&s);
    let app = router(app_state(&s));
    let (status, created) = call(&app, "POST", "/sessions", Some(create_body(&s, json!({})))).await;
    assert_eq!(status, StatusCode::CREATED);
    check_schema("create_session.response", &created);
    let id = created["id"].as_str().unwrap().to_string();

    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/result"), None).await;
    assert!(status == StatusCode::TOO_EARLY || status == StatusCode::OK);

    let mut asked: Vec<String> = Vec::new();
    let mut checked_partial = false;
    loop {
        let pending = settle(&app, &id).await;
        check_schema("pending.response", &pending);
        if pending["state"] == "finished" {
            assert!(pending["pending"].as_array().unwrap().is_empty());
            break;
        }
        assert_eq!(pending["state"], "awaiting_labels");
        let vids: Vec<String> = serde_json::from_value(pending["pending"].clone()).unwrap();
        assert!(!vids.is_empty());
        // payloads mirror the store records
        for (vid, seg) in vids.iter().zip(pending["segments"].as_array().unwrap()) {
            let expected = SegmentRecord::from_segment(s.get(vid).unwrap());
            let got: SegmentRecord = serde_json::from_value(seg.clone()).unwrap();
            assert_eq!(got, expected);
            assert_eq!(got.frame_count, 128);
        }
        for v in &vids {
            assert!(!asked.contains(v), "{v} requested twice");
        }
        asked.extend(vids.iter().cloned());

        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(json!({"labels": [{"vid": "seg99999", "label": "pos"}]}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);

        let mut rest = vids.as_slice();
        if vids.len() > 1 && !checked_partial {
            checked_partial = true;
            let first = json!({"labels": [{"vid": vids[0], "label": label_of(&t, &vids[0])}]});
            check_schema("labels.request", &first);
            let (status, ack) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(first.clone())).await;
            assert_eq!(status, StatusCode::OK);
            check_schema("labels.response", &ack);
            assert_eq!(ack["state"], "awaiting_labels");
            assert_eq!(ack["pending"].as_array().unwrap().len(), vids.len() - 1);
            let (status, _) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(first)).await;
            assert_eq!(status, StatusCode::CONFLICT);
            rest = &vids[1..];
        }
        let labels: Vec<Value> = rest.iter().map(|v| json!({"vid": v, "label": label_of(&t, v)})).collect();
        let (status, ack) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(json!({"labels": labels}))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ack["accepted"], rest.len());
    }
    assert!(checked_partial);
    assert_eq!(asked.len(), 10 - 4);

    let (status, result) = call(&app, "GET", &format!("/sessions/{id}/result?rank=0"), None).await;
    assert_eq!(status, StatusCode::OK);
    check_schema("result.response", &result);
    let top = result["result"]["top_k"].as_array().unwrap();
    assert!(!top.is_empty() && top.len() <= 5);
    assert_eq!(result["result"]["labels_used"], 10);

    // preview of the best query equals direct execution on the held-out set
    let ex = default_executor();
    let best = parse(top[0]["query"].as_str().unwrap(), ex.registry()).unwrap();
    let labeled: BTreeSet<String> = result["result"]["labels"].as_array().unwrap().iter().map(|e| e["vid"].as_str().unwrap().to_string()).collect();
    let held_out: Vec<&str> = s.vids().filter(|v| !labeled.contains(*v)).collect();
    let expected: Vec<String> = ex.execute(&best, &s, &held_out).unwrap().into_iter().collect();
    assert_eq!(result["preview"]["evaluated"], held_out.len());
    assert_eq!(result["preview"]["matching"], json!(expected));

    let (status, preview) = call(&app, "GET", &format!("/sessions/{id}/result?rank=0&vids=seg00001,seg00002"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(preview["preview"]["evaluated"], 2);
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/result?rank=99"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let late = json!({"labels": [{"vid": "seg00003", "label": "pos"}]});
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(late)).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn sessions_are_independent() {
    let s = store();
    let app = router(app_state(&s));
    let (_, a) = call(&app, "POST", "/sessions", Some(create_body(&s, json!({})))).await;
    let (_, b) = call(&app, "POST", "/sessions", Some(create_body(&s, json!({})))).await;
    assert_ne!(a["id"], b["id"]);
    let pa = settle(&app, a["id"].as_str().unwrap()).await;
    let pb = settle(&app, b["id"].as_str().unwrap()).await;
    // same inputs and seed, so both ask for the same segments
    assert_eq!(pa["pending"], pb["pending"]);
    let vid = pa["pending"][0].as_str().unwrap();
    let (status, _) = call(&app, "POST", &format!("/sessions/{}/labels", a["id"].as_str().unwrap()), Some(json!({"labels": [{"vid": vid, "label": "neg"}]}))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, pb2) = call(&app, "GET", &format!("/sessions/{}/pending", b["id"].as_str().unwrap()), None).await;
    assert_eq!(pb2["pending"], pb["pending"]);
}

#[tokio::test]
async fn label_timeout_aborts_the_session() {
    let s = store();
    let app = router(app_state(&s));
    let (_, created) = call(&app, "POST", "/sessions", Some(create_body(&s, json!({"label_timeout_secs": 0})))).await;
    let id = created["id"].as_str().unwrap();
    // the pending batch is visible until the label wait expires
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let body = settle(&app, id).await;
        if body["state"] == "aborted" {
            break;
        }
        assert_eq!(body["state"], "awaiting_labels");
        assert!(Instant::now() < deadline, "session never aborted");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let (status, err) = call(&app, "GET", &format!("/sessions/{id}/result"), None).await;
    assert_eq!(status, StatusCode::GONE);
    check_schema("error", &err);
}

#[tokio::test]
async fn event_log_replays_sessions() {
    let s = store();
    let t = truth(&s);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let datasets = BTreeMap::from([("pairs".to_string(), s.clone())]);

    let app = router(AppState::with_options(datasets.clone(), Some(&log), 1).unwrap());
    let (_, created) = call(&app, "POST", "/sessions", Some(create_body(&s, json!({})))).await;
    let id = created["id"].as_str().unwrap().to_string();
    let first = settle(&app, &id).await;
    let labels: Vec<Value> = first["pending"].as_array().unwrap().iter().map(|v| json!({"vid": v, "label": label_of(&t, v.as_str().unwrap())})).collect();
    call(&app, "POST", &format!("/sessions/{id}/labels"), Some(json!({"labels": labels}))).await;
    let second = settle(&app, &id).await;
    drop(app);

    let replayed = router(AppState::with_options(datasets, Some(&log), 1).unwrap());
    let again = settle(&replayed, &id).await;
    assert_eq!(again["state"], second["state"]);
    assert_eq!(again["pending"], second["pending"]);
    assert_eq!(again["progress"]["labels_used"], second["progress"]["labels_used"]);
    // new sessions continue the numbering
    let (_, next) = call(&replayed, "POST", "/sessions", Some(create_body(&s, json!({})))).await;
    assert_ne!(next["id"], json!(id));
}
