use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;
use unids::corpus::tod::{generate_tod_corpus, synthetic_database};
use unids::model::{ModelConfig, Transformer};
use unids::pipeline::PipelineConfig;
use unids::schema::{parse_belief, BucketTable};
use unids::tokenizer::Vocabulary;
use unids_service::{router, AppState, Engine, DEFAULT_TTL};

fn state(ttl: Duration, static_dir: Option<std::path::PathBuf>) -> AppState {
    let db = synthetic_database(0);
    let corpus = generate_tod_corpus(&db, 4, 0).unwrap();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        heads: 2,
        embed_dim: 16,
        ffn_dim: 32,
        max_seq_len: 256,
        dropout: 0.0,
        vocab_size: vocab.len(),
    };
    let engine = Engine {
        model: Transformer::new(cfg, 1).unwrap(),
        vocab,
        db,
        pipeline: PipelineConfig::default(),
    };
    AppState::new(engine, ttl, static_dir)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["schema_version"], 1);
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_reports_ok() {
    let app = router(state(DEFAULT_TTL, None));
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn message_returns_a_full_turn() {
    let app = router(state(DEFAULT_TTL, None));
    let id = new_session(&app).await;
    let (status, body) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({"text": "hello there"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session_id"], id.as_str());
    assert_eq!(body["turn_index"], 0);
    assert_eq!(body["user_text"], "hello there");
    assert!(matches!(body["mode"].as_str(), Some("chit" | "task")));
    for field in ["response_text", "lexicalized_text", "belief", "db_token", "act", "raw_belief_text", "raw_act_text"] {
        assert!(body[field].is_string(), "{field} missing");
    }
    assert!(body["repairs"].is_array());
    assert!(body["belief_state"].is_array());
}

#[tokio::test]
async fn db_token_agrees_with_a_direct_query() {
    let st = state(DEFAULT_TTL, None);
    let app = router(st.clone());
    let id = new_session(&app).await;
    let db = synthetic_database(0);
    for text in ["i need a cheap hotel in the north .", "what is the phone number ?"] {
        let (status, body) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({"text": text}))).await;
        assert_eq!(status, StatusCode::OK);
        let belief_text = body["belief"].as_str().unwrap();
        let expected = match parse_belief(belief_text) {
            Ok(b) => db
                .query(&b.value, &BucketTable::default())
                .map(|q| q.token.token().to_string())
                .unwrap_or_else(|_| "[db_nore]".into()),
            Err(_) => "[db_nore]".into(),
        };
        assert_eq!(body["db_token"], expected.as_str());
    }
}

#[tokio::test]
async fn state_grows_and_reset_clears() {
    let app = router(state(DEFAULT_TTL, None));
    let id = new_session(&app).await;
    let (_, body) = call(&app, "GET", &format!("/api/session/{id}/state"), None).await;
    assert_eq!(body["turns"].as_array().unwrap().len(), 0);
    for k in 0..3 {
        let (status, body) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({"text": "do you like tea ?"}))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["turn_index"], k);
    }
    let (_, body) = call(&app, "GET", &format!("/api/session/{id}/state"), None).await;
    let turns = body["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 3);
    let indices: Vec<u64> = turns.iter().map(|t| t["turn_index"].as_u64().unwrap()).collect();
    assert_eq!(indices, [0, 1, 2]);

    let (status, body) = call(&app, "POST", &format!("/api/session/{id}/reset"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session_id"], id.as_str());
    let (_, body) = call(&app, "GET", &format!("/api/session/{id}/state"), None).await;
    assert_eq!(body["turns"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn error_statuses() {
    let st = state(DEFAULT_TTL, None);
    let app = router(st.clone());
    let (status, body) = call(&app, "POST", "/api/session/nope/message", Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_session");
    let (status, _) = call(&app, "GET", "/api/session/nope/state", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/api/session/nope/reset", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = new_session(&app).await;
    let (status, body) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({"text": "   "}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "empty_message");

    // A request still holding the session makes the next one conflict.
    let held = st.sessions().acquire(&id).unwrap();
    let (status, body) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "session_busy");
    drop(held);
    let (status, _) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn concurrent_posts_on_one_session_stay_linear() {
    let app = router(state(DEFAULT_TTL, None));
    let id = new_session(&app).await;
    let uri = format!("/api/session/{id}/message");
    let (a, b) = tokio::join!(
        call(&app, "POST", &uri, Some(json!({"text": "hello"}))),
        call(&app, "POST", &uri, Some(json!({"text": "hello again"}))),
    );
    let ok = [a.0, b.0].iter().filter(|s| **s == StatusCode::OK).count();
    assert!(ok >= 1);
    assert!([a.0, b.0].iter().all(|s| *s == StatusCode::OK || *s == StatusCode::CONFLICT));
    let (_, state) = call(&app, "GET", &format!("/api/session/{id}/state"), None).await;
    assert_eq!(state["turns"].as_array().unwrap().len(), ok);
}

#[tokio::test]
async fn message_without_session_creates_one() {
    let app = router(state(DEFAULT_TTL, None));
    let (status, body) = call(&app, "POST", "/api/message", Some(json!({"text": "hello", "session_id": ""}))).await;
    assert_eq!(status, StatusCode::OK);
    let id = body["session_id"].as_str().unwrap();
    let (_, state) = call(&app, "GET", &format!("/api/session/{id}/state"), None).await;
    assert_eq!(state["turns"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn expired_sessions_are_not_found() {
    let app = router(state(Duration::ZERO, None));
    let id = new_session(&app).await;
    tokio::time::sleep(Duration::from_millis(5)).await;
    let (status, _) = call(&app, "GET", &format!("/api/session/{id}/state"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn serves_static_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(state(DEFAULT_TTL, Some(dir.path().to_path_buf())));
    let resp = app
        .clone()
        .oneshot(Request::builder().uri("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/html; charset=utf-8");
    let (status, _) = call(&app, "GET", "/missing.js", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
