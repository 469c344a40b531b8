use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use image::{Rgb, RgbImage};
use serde_json::{json, Value};
use stainlab_core::eval::{Assay, Category};
use stainlab_core::Stain;
use stainlab_review::{consensus_from_log, router, ConsensusReport, Study, StudyBuilder, TOKEN_HEADER};
use tower::ServiceExt;

const FOVS: u32 = 10;

fn build_study(dir: &std::path::Path) {
    let mut b = StudyBuilder::new(dir, "test-secret").unwrap();
    for fov in 0..FOVS {
        let adjacent = RgbImage::from_pixel(8, 8, Rgb([200, 10 + fov as u8, 30]));
        let synthetic = RgbImage::from_pixel(8, 8, Rgb([190, 20 + fov as u8, 40]));
        b.add_pair(Assay::CmetPdl1Egfr, Stain::Green, fov, &adjacent, &synthetic).unwrap();
    }
    b.finish().unwrap();
}

fn app(dir: &std::path::Path) -> Router {
    router(Arc::new(Study::open(dir).unwrap()))
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(TOKEN_HEADER, t);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn json_call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, token, body).await;
    let v = if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap_or(Value::Null) };
    (s, v)
}

fn assert_blind(bytes: &[u8]) {
    let text = String::from_utf8_lossy(bytes).to_lowercase();
    for word in ["adjacent", "synthetic", "left_arm", "arm"] {
        assert!(!text.contains(word), "payload leaks {word:?}: {text}");
    }
}

async fn create(app: &Router, reader: &str, seed: u64) -> (String, String) {
    let (s, v) = json_call(
        app,
        "POST",
        "/sessions",
        None,
        Some(json!({"reader": reader, "assay": "cMET-PDL1-EGFR", "stain": "Green", "seed": seed})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    (v["session_id"].as_str().unwrap().to_string(), v["token"].as_str().unwrap().to_string())
}

fn scores(strong: u32) -> Value {
    json!({"no_stain": 100 - strong, "weak": 0, "strong_moderate": strong})
}

/// Scores every pair, giving the left image `left` and the right `right`.
async fn complete(app: &Router, id: &str, token: &str, tag: &str, left: u32, right: u32) {
    let mut seen = 0;
    loop {
        let (s, bytes) = call(app, "GET", &format!("/sessions/{id}/next"), Some(token), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_blind(&bytes);
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        if v["pair"].is_null() {
            assert_eq!(v["status"], "complete");
            break;
        }
        let body = json!({
            "submission_id": format!("{tag}-{seen}"),
            "pair_id": v["pair"]["pair_id"],
            "left": scores(left),
            "right": scores(right),
        });
        let (s, bytes) = call(app, "POST", &format!("/sessions/{id}/scores"), Some(token), Some(body)).await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
        assert_blind(&bytes);
        seen += 1;
    }
    assert_eq!(seen, FOVS);
}

#[tokio::test]
async fn healthz_responds() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let (s, v) = json_call(&app(dir.path()), "GET", "/healthz", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn session_covers_every_fov_and_payloads_stay_blind() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let app = app(dir.path());
    let (s, bytes) = call(
        &app,
        "POST",
        "/sessions",
        None,
        Some(json!({"reader": "r1", "assay": "cMET-PDL1-EGFR", "stain": "Green", "seed": 3})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_blind(&bytes);
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["pair_count"], FOVS);
    let id = v["session_id"].as_str().unwrap();
    let token = v["token"].as_str().unwrap();

    let (_, export) = call(&app, "GET", "/export", None, None).await;
    assert_blind(&export);

    let (_, first) = json_call(&app, "GET", &format!("/sessions/{id}/next"), Some(token), None).await;
    let left = first["pair"]["left"]["url"].as_str().unwrap();
    let (s, png) = call(&app, "GET", left, None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");

    complete(&app, id, token, "a", 20, 30).await;
}

#[tokio::test]
async fn left_right_order_is_seed_deterministic() {
    let order = |seed| async move {
        let dir = tempfile::tempdir().unwrap();
        build_study(dir.path());
        let app = app(dir.path());
        let (id, token) = create(&app, "r1", seed).await;
        let mut urls = Vec::new();
        for i in 0..FOVS {
            let (_, v) = json_call(&app, "GET", &format!("/sessions/{id}/next"), Some(&token), None).await;
            urls.push(v["pair"]["left"]["url"].as_str().unwrap().to_string());
            let body = json!({"submission_id": format!("x{i}"), "pair_id": v["pair"]["pair_id"], "left": scores(0), "right": scores(0)});
            call(&app, "POST", &format!("/sessions/{id}/scores"), Some(&token), Some(body)).await;
        }
        urls
    };
    let a = order(11).await;
    assert_eq!(a, order(11).await);
    assert_ne!(a, order(12).await);
}

#[tokio::test]
async fn token_is_required() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let app = app(dir.path());
    let (id, _) = create(&app, "r1", 1).await;
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/next"), None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/next"), Some("nope"), None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&app, "GET", "/sessions/unknown/next", Some("nope"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn scores_not_summing_to_100_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let app = app(dir.path());
    let (id, token) = create(&app, "r1", 1).await;
    let (_, v) = json_call(&app, "GET", &format!("/sessions/{id}/next"), Some(&token), None).await;
    let pair = v["pair"]["pair_id"].clone();
    let body = json!({"submission_id": "s1", "pair_id": pair, "left": {"no_stain": 50, "weak": 20, "strong_moderate": 20}, "right": scores(0)});
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/scores"), Some(&token), Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].is_string());
    let (_, v) = json_call(&app, "GET", &format!("/sessions/{id}/next"), Some(&token), None).await;
    assert_eq!(v["cursor"], 0);

    let (s, _) = call(&app, "POST", "/sessions", None, Some(json!({"reader": "r"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn resubmission_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let app = app(dir.path());
    let (id, token) = create(&app, "r1", 1).await;
    let (_, v) = json_call(&app, "GET", &format!("/sessions/{id}/next"), Some(&token), None).await;
    let body = json!({"submission_id": "s1", "pair_id": v["pair"]["pair_id"], "left": scores(10), "right": scores(20)});
    let (s, a) = json_call(&app, "POST", &format!("/sessions/{id}/scores"), Some(&token), Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a["duplicate"], false);
    let (s, b) = json_call(&app, "POST", &format!("/sessions/{id}/scores"), Some(&token), Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["duplicate"], true);
    assert_eq!(b["cursor"], 1);

    let mut changed = body;
    changed["left"] = scores(90);
    let (s, _) = json_call(&app, "POST", &format!("/sessions/{id}/scores"), Some(&token), Some(changed)).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, export) = call(&app, "GET", "/export", None, None).await;
    let lines = String::from_utf8(export).unwrap();
    assert_eq!(lines.lines().filter(|l| l.contains("score_submitted")).count(), 1);
}

#[tokio::test]
async fn out_of_order_submission_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let app = app(dir.path());
    let (id, token) = create(&app, "r1", 1).await;
    let state = Study::open(dir.path()).unwrap().state();
    let second = state.sessions[&id].created.pairs[1].pair_id.clone();
    let body = json!({"submission_id": "s1", "pair_id": second, "left": scores(0), "right": scores(0)});
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/scores"), Some(&token), Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn consensus_waits_for_every_session() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let app = app(dir.path());
    let (s, _) = call(&app, "GET", "/reports/consensus?category=strong_moderate", None, None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (a, ta) = create(&app, "r1", 1).await;
    let (b, tb) = create(&app, "r2", 2).await;
    complete(&app, &a, &ta, "a", 20, 40).await;
    let (s, _) = call(&app, "GET", "/reports/consensus?category=strong_moderate", None, None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    complete(&app, &b, &tb, "b", 40, 20).await;
    let (s, _) = call(&app, "GET", "/reports/consensus?category=strong_moderate", None, None).await;
    assert_eq!(s, StatusCode::OK);

    let (s, _) = call(&app, "GET", "/reports/consensus", None, None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "GET", "/reports/consensus?category=purple", None, None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn state_survives_reopen_and_offline_consensus_matches() {
    let dir = tempfile::tempdir().unwrap();
    build_study(dir.path());
    let (a, ta, b, tb);
    {
        let app = app(dir.path());
        (a, ta) = create(&app, "r1", 5).await;
        (b, tb) = create(&app, "r2", 6).await;
        complete(&app, &a, &ta, "a", 10, 30).await;
        let (_, v) = json_call(&app, "GET", &format!("/sessions/{b}/next"), Some(&tb), None).await;
        let body = json!({"submission_id": "b-first", "pair_id": v["pair"]["pair_id"], "left": scores(50), "right": scores(60)});
        let (s, _) = call(&app, "POST", &format!("/sessions/{b}/scores"), Some(&tb), Some(body)).await;
        assert_eq!(s, StatusCode::OK);
    }
    let app = app(dir.path());
    let (_, v) = json_call(&app, "GET", &format!("/sessions/{b}"), Some(&tb), None).await;
    assert_eq!(v["cursor"], 1);
    let (_, v) = json_call(&app, "GET", &format!("/sessions/{a}"), Some(&ta), None).await;
    assert_eq!(v["status"], "complete");
    complete_rest(&app, &b, &tb).await;

    let (s, live) = json_call(&app, "GET", "/reports/consensus?category=strong_moderate", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let live: ConsensusReport = serde_json::from_value(live).unwrap();
    let (_, export) = call(&app, "GET", "/export", None, None).await;
    let offline = consensus_from_log(&String::from_utf8(export).unwrap(), Category::StrongModerate).unwrap();
    assert_eq!(live, offline);
    assert_eq!(live.sessions, 2);
    assert_eq!(live.adjacent.rows.len(), FOVS as usize);
}

async fn complete_rest(app: &Router, id: &str, token: &str) {
    let mut i = 0;
    loop {
        let (_, v) = json_call(app, "GET", &format!("/sessions/{id}/next"), Some(token), None).await;
        if v["pair"].is_null() {
            break;
        }
        let body = json!({"submission_id": format!("rest-{i}"), "pair_id": v["pair"]["pair_id"], "left": scores(25), "right": scores(35)});
        let (s, _) = call(app, "POST", &format!("/sessions/{id}/scores"), Some(token), Some(body)).await;
        assert_eq!(s, StatusCode::OK);
        i += 1;
    }
}
