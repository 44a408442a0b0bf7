//! HTTP chat API over the UniDS pipeline.
//!
//! | method | path                          | body                 |
//! |--------|-------------------------------|----------------------|
//! | POST   | `/api/session`                | none                 |
//! | POST   | `/api/session/{id}/message`   | `{"text": "..."}`    |
//! | POST   | `/api/message`                | `{"text", "session_id"?}` |
//! | GET    | `/api/session/{id}/state`     | none                 |
//! | POST   | `/api/session/{id}/reset`     | none                 |
//! | GET    | `/healthz`                    | none                 |
//!
//! Unknown sessions get 404, a message to a session that is still
//! answering another gets 409, and an empty message gets 422. Any other
//! GET path is served from the static directory when one is configured.

pub mod api;
pub mod assets;
pub mod sessions;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use unids::db::EntityDatabase;
use unids::model::Model;
use unids::pipeline::{Pipeline, PipelineConfig};
use unids::tokenizer::Vocabulary;

use crate::api::{
    ErrorBody, Health, MessageRequest, MessageResponse, SessionCreated, StateResponse, TurnView, SCHEMA_VERSION,
};
use crate::sessions::{LookupError, SessionStore};

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

/// Everything a request needs. The model and database are read-only.
pub struct Engine {
    pub model: Model,
    pub vocab: Vocabulary,
    pub db: EntityDatabase,
    pub pipeline: PipelineConfig,
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    sessions: Arc<SessionStore>,
    static_dir: Option<Arc<PathBuf>>,
}

impl AppState {
    pub fn new(engine: Engine, ttl: Duration, static_dir: Option<PathBuf>) -> Self {
        AppState {
            engine: Arc::new(engine),
            sessions: Arc::new(SessionStore::new(ttl)),
            static_dir: static_dir.map(Arc::new),
        }
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<LookupError> for ApiError {
    fn from(e: LookupError) -> Self {
        match e {
            LookupError::NotFound => ApiError::new(StatusCode::NOT_FOUND, "unknown_session", "no such session"),
            LookupError::Busy => ApiError::new(
                StatusCode::CONFLICT,
                "session_busy",
                "the previous message in this session is still being answered",
            ),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION,
            error: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/api/session", post(create_session))
        .route("/api/message", post(post_message_any))
        .route("/api/session/{id}/message", post(post_message))
        .route("/api/session/{id}/state", get(get_state))
        .route("/api/session/{id}/reset", post(reset))
        .fallback(static_files)
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        schema_version: SCHEMA_VERSION,
        status: "ok".into(),
        sessions: state.sessions.len(),
    })
}

async fn create_session(State(state): State<AppState>) -> (StatusCode, Json<SessionCreated>) {
    let session_id = state.sessions.create();
    (
        StatusCode::CREATED,
        Json(SessionCreated {
            schema_version: SCHEMA_VERSION,
            session_id,
        }),
    )
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> Result<Json<MessageResponse>, ApiError> {
    run_turn(state, id, req.text).await
}

async fn post_message_any(
    State(state): State<AppState>,
    Json(req): Json<MessageRequest>,
) -> Result<Json<MessageResponse>, ApiError> {
    let id = match req.session_id.filter(|s| !s.is_empty()) {
        Some(id) => id,
        None => state.sessions.create(),
    };
    run_turn(state, id, req.text).await
}

async fn run_turn(state: AppState, id: String, text: String) -> Result<Json<MessageResponse>, ApiError> {
    if text.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_message",
            "message text is empty",
        ));
    }
    let mut session = state.sessions.acquire(&id)?;
    let engine = state.engine.clone();
    // The guard moves into the worker so the session stays held until the
    // turn is committed.
    let joined = tokio::task::spawn_blocking(move || {
        let pipeline = Pipeline::new(&engine.model, &engine.vocab, &engine.db, engine.pipeline.clone());
        let (trace, next) = pipeline.step(&session.state, &text)?;
        let view = TurnView::new(session.traces.len(), &trace);
        session.state = next;
        session.traces.push(trace);
        Ok::<_, unids::Error>(view)
    })
    .await;
    let turn = match joined {
        Ok(Ok(view)) => view,
        Ok(Err(e)) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "pipeline_error", e.to_string())),
        Err(e) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "worker_failed", e.to_string())),
    };
    Ok(Json(MessageResponse {
        schema_version: SCHEMA_VERSION,
        session_id: id,
        turn,
    }))
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<StateResponse>, ApiError> {
    let session = state.sessions.acquire(&id)?;
    Ok(Json(StateResponse {
        schema_version: SCHEMA_VERSION,
        session_id: id,
        turns: session.traces.iter().enumerate().map(|(i, t)| TurnView::new(i, t)).collect(),
    }))
}

async fn reset(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<StateResponse>, ApiError> {
    let mut session = state.sessions.acquire(&id)?;
    session.reset();
    Ok(Json(StateResponse {
        schema_version: SCHEMA_VERSION,
        session_id: id,
        turns: Vec::new(),
    }))
}

async fn static_files(State(state): State<AppState>, uri: Uri) -> Response {
    match &state.static_dir {
        Some(root) if !uri.path().starts_with("/api/") => assets::serve_file(root, uri.path()).await,
        _ => ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route").into_response(),
    }
}
