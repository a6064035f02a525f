//! HTTP/JSON API for running one audit session interactively.
//!
//! | method | path | body | success |
//! |--------|------|------|---------|
//! | POST | `/session` | [`CreateSession`] | 201, [`SessionView`] |
//! | POST | `/session/draw` | none | 200, [`DrawOutcome`] |
//! | POST | `/session/reveal` | [`RevealRequest`] | 200, [`SessionView`] |
//! | POST | `/session/interpretation` | [`InterpretationRequest`] | 200, [`EvaluationSummary`] |
//! | GET | `/session/state` | none | 200, [`SessionView`] |
//! | GET | `/session/transcript` | none | 200, JSON lines |
//!
//! Out-of-order requests get 409, unacceptable content 422, and requests
//! before a session exists 404. The server binds to loopback by default.

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use soba_core::audit::AuditParams;
use soba_core::commit::{BallotId, Salt};
use soba_core::model::{ContestId, Selection};
use soba_core::sampler::SeedValue;

use crate::formats::PublishedFiles;
use crate::session::{DrawOutcome, EvaluationSummary, Session, SessionError, SessionView};
use crate::transcript::{Entry, EventSink, FileSink};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// Keeps every line in memory for `GET /session/transcript` and, when
/// configured, also appends it durably to a file.
#[derive(Debug, Default)]
pub struct ServiceSink {
    lines: Vec<String>,
    file: Option<FileSink>,
}

impl EventSink for ServiceSink {
    fn append(&mut self, entry: &Entry) -> io::Result<()> {
        if let Some(f) = &mut self.file {
            f.append(entry)?;
        }
        self.lines.push(entry.to_line());
        Ok(())
    }
}

pub struct AppState {
    files: PublishedFiles,
    transcript_dir: Option<PathBuf>,
    session: Mutex<Option<Session<ServiceSink>>>,
}

impl AppState {
    /// `transcript_dir`, when set, receives one `<session id>.jsonl` file per session.
    pub fn new(files: PublishedFiles, transcript_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            files,
            transcript_dir,
            session: Mutex::new(None),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/draw", post(draw))
        .route("/session/reveal", post(reveal))
        .route("/session/interpretation", post(interpret))
        .route("/session/state", get(view))
        .route("/session/transcript", get(transcript))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub risk_limit: f64,
    pub gamma: f64,
    pub lambda: f64,
    #[serde(default)]
    pub max_draws: Option<u64>,
    /// Exactly one of `seed` and `dice`.
    #[serde(default)]
    pub seed: Option<String>,
    #[serde(default)]
    pub dice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealedSalt {
    pub contest: ContestId,
    /// 32 lowercase hex characters.
    pub salt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevealRequest {
    pub j: u64,
    pub ballot_id: BallotId,
    pub salts: Vec<RevealedSalt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpretationRequest {
    pub j: u64,
    pub ballot_id: BallotId,
    /// False when no ballot with this id could be found.
    pub found: bool,
    #[serde(default)]
    pub selections: Vec<Selection>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match e {
            SessionError::Protocol(_) => StatusCode::CONFLICT,
            SessionError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn no_session() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no session has been created".into())
}

fn with_session<T>(state: &AppState, f: impl FnOnce(&mut Session<ServiceSink>) -> Result<T, ApiError>) -> Result<T, ApiError> {
    let mut guard = state.session.lock().unwrap_or_else(|p| p.into_inner());
    let s = guard.as_mut().ok_or_else(no_session)?;
    f(s)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let invalid = |m: String| ApiError(StatusCode::UNPROCESSABLE_ENTITY, m);
    let seed = match (&req.seed, &req.dice) {
        (Some(s), None) => SeedValue::new(s.clone()),
        (None, Some(d)) => SeedValue::from_dice(d).map_err(|e| invalid(e.to_string()))?,
        _ => return Err(invalid("give exactly one of seed and dice".into())),
    };
    let mut params = AuditParams::new(req.risk_limit, req.gamma, req.lambda, seed);
    params.max_draws = req.max_draws;

    let mut guard = state.session.lock().unwrap_or_else(|p| p.into_inner());
    if guard.as_ref().is_some_and(|s| !s.status().is_terminal()) {
        return Err(ApiError(StatusCode::CONFLICT, "a session is already in progress".into()));
    }
    let id = hex::encode(rand::random::<[u8; 8]>());
    let file = match &state.transcript_dir {
        Some(dir) => Some(
            FileSink::create(&dir.join(format!("{id}.jsonl")))
                .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?,
        ),
        None => None,
    };
    let sink = ServiceSink {
        lines: Vec::new(),
        file,
    };
    let session = Session::create_with_id(&state.files, params, sink, id)?;
    let v = session.view();
    *guard = Some(session);
    Ok((StatusCode::CREATED, Json(v)))
}

async fn draw(State(state): State<Arc<AppState>>) -> Result<Json<DrawOutcome>, ApiError> {
    with_session(&state, |s| Ok(Json(s.draw()?)))
}

async fn reveal(State(state): State<Arc<AppState>>, Json(req): Json<RevealRequest>) -> Result<Json<SessionView>, ApiError> {
    let salts = req
        .salts
        .iter()
        .map(|r| Ok((r.contest.clone(), Salt::from_hex(&r.salt)?)))
        .collect::<Result<Vec<_>, soba_core::Error>>()
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    with_session(&state, |s| {
        s.reveal(req.j, &req.ballot_id, salts)?;
        Ok(Json(s.view()))
    })
}

async fn interpret(
    State(state): State<Arc<AppState>>,
    Json(req): Json<InterpretationRequest>,
) -> Result<Json<EvaluationSummary>, ApiError> {
    if !req.found && !req.selections.is_empty() {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "selections given for a ballot that was not found".into(),
        ));
    }
    with_session(&state, |s| {
        Ok(Json(s.interpret(req.j, &req.ballot_id, req.found.then_some(req.selections))?))
    })
}

async fn view(State(state): State<Arc<AppState>>) -> Result<Json<SessionView>, ApiError> {
    with_session(&state, |s| Ok(Json(s.view())))
}

async fn transcript(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    with_session(&state, |s| {
        let mut body = s.sink().lines.join("\n");
        body.push('\n');
        Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
    })
}
