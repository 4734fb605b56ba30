//! HTTP surface over the run store, the human-session registry and the
//! persisted monitor state.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dots_core::clock::{Clock, EpochMillis};
use dots_core::dialogue::FinalRecommendations;
use dots_core::scoring::DotsRecord;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::monitor_host::{load_state, windows_view};
use crate::sessions::{SessionRegistry, SessionsError};
use crate::store::{Namespace, RunEnvelope, RunFilter, RunKind, RunStore, StoreError};

/// A static bearer token, optionally confined to one namespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenScope {
    pub token: String,
    #[serde(default)]
    pub namespace: Option<Namespace>,
}

pub struct AppState {
    pub store: RunStore,
    pub sessions: Option<SessionRegistry>,
    /// Empty means the service is open.
    pub tokens: Vec<TokenScope>,
    pub clock: Arc<dyn Clock + Send + Sync>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) | StoreError::MissingArtifact { .. } => StatusCode::NOT_FOUND,
            StoreError::Forbidden(_) => StatusCode::FORBIDDEN,
            StoreError::DuplicateRunId(_) => StatusCode::CONFLICT,
            StoreError::InvalidRunId(_) => StatusCode::BAD_REQUEST,
            StoreError::StorageFull => StatusCode::INSUFFICIENT_STORAGE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<SessionsError> for ApiError {
    fn from(e: SessionsError) -> Self {
        let status = match &e {
            SessionsError::UnknownCase(_) | SessionsError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionsError::Session(_) => StatusCode::CONFLICT,
            SessionsError::Scoring(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionsError::Store(inner) => return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, inner.to_string()),
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// What the caller may see: everything, or a single namespace.
#[derive(Debug, Clone, Copy)]
struct Access(Option<Namespace>);

impl Access {
    fn check(self, ns: Namespace, run_id: &str) -> Result<(), ApiError> {
        match self.0 {
            Some(own) if own != ns => Err(ApiError::from(StoreError::Forbidden(run_id.into()))),
            _ => Ok(()),
        }
    }
}

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<Access, ApiError> {
    if state.tokens.is_empty() {
        return Ok(Access(None));
    }
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "bearer token required"))?;
    state
        .tokens
        .iter()
        .find(|t| t.token == presented)
        .map(|t| Access(t.namespace))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown token"))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}/message", post(session_message))
        .route("/sessions/{id}/finalize", post(finalize_session))
        .route("/runs", get(list_runs))
        .route("/runs/{id}/dots", get(run_dots))
        .route("/metrics/windows", get(metric_windows))
        .route("/gate/{version}", get(gate))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

fn registry(state: &AppState) -> Result<&SessionRegistry, ApiError> {
    state.sessions.as_ref().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no case bank loaded"))
}

#[derive(Debug, Deserialize)]
struct OpenBody {
    case_id: String,
    #[serde(default)]
    seed: u64,
}

async fn open_session(State(state): State<Arc<AppState>>, headers: HeaderMap, Json(body): Json<OpenBody>) -> Response {
    let result = (|| {
        authorize(&state, &headers)?.check(Namespace::Evaluation, "sessions")?;
        Ok::<_, ApiError>(registry(&state)?.open(&body.case_id, body.seed)?)
    })();
    match result {
        Ok(opened) => (StatusCode::CREATED, Json(opened)).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    #[serde(alias = "message")]
    text: String,
}

async fn session_message(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<MessageBody>,
) -> ApiResult<crate::sessions::Reply> {
    authorize(&state, &headers)?.check(Namespace::Evaluation, &id)?;
    Ok(Json(registry(&state)?.message(&id, &body.text)?))
}

async fn finalize_session(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(mut body): Json<Value>,
) -> ApiResult<crate::sessions::Finalized> {
    authorize(&state, &headers)?.check(Namespace::Evaluation, &id)?;
    // The console submits a form, so the block marker is implied.
    if let Some(obj) = body.as_object_mut() {
        obj.entry("final_recommendations").or_insert(Value::Bool(true));
    }
    let recs: FinalRecommendations =
        serde_json::from_value(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(registry(&state)?.finalize(&id, &recs)?))
}

#[derive(Debug, Default, Deserialize)]
struct RunsQuery {
    from: Option<EpochMillis>,
    to: Option<EpochMillis>,
    kind: Option<String>,
    namespace: Option<String>,
    model_version: Option<String>,
    model: Option<String>,
    case_id: Option<String>,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(name: &str, raw: Option<String>) -> Result<Option<T>, ApiError> {
    raw.map(|r| {
        serde_json::from_value(Value::String(r.clone()))
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("bad {name} {r:?}")))
    })
    .transpose()
}

async fn list_runs(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<RunsQuery>,
) -> ApiResult<Vec<RunEnvelope>> {
    let access = authorize(&state, &headers)?;
    state.store.refresh()?;
    let mut filter = RunFilter {
        from: q.from,
        to: q.to,
        kind: parse_enum::<RunKind>("kind", q.kind)?,
        namespace: parse_enum::<Namespace>("namespace", q.namespace)?,
        model_version: q.model_version.or(q.model),
        case_id: q.case_id,
    };
    if let Some(own) = access.0 {
        if filter.namespace.is_some_and(|n| n != own) {
            return Err(ApiError::from(StoreError::Forbidden(String::from("namespace"))));
        }
        filter.namespace = Some(own);
    }
    Ok(Json(state.store.query(&filter)))
}

async fn run_dots(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<DotsRecord> {
    let access = authorize(&state, &headers)?;
    state.store.refresh()?;
    let env = state.store.resolve(&id).ok_or_else(|| ApiError::from(StoreError::NotFound(id.clone())))?;
    access.check(env.namespace, &id)?;
    Ok(Json(state.store.artifact_json(&env, "dots")?))
}

#[derive(Debug, Deserialize)]
struct WindowsQuery {
    model: String,
    #[serde(default)]
    at: Option<EpochMillis>,
}

fn state_root(state: &AppState) -> PathBuf {
    state.store.root()
}

async fn metric_windows(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<WindowsQuery>,
) -> ApiResult<crate::monitor_host::WindowsView> {
    authorize(&state, &headers)?.check(Namespace::Monitoring, "metrics")?;
    let monitor = load_state(&state_root(&state)).ok_or_else(|| ApiError::not_found("no monitor state"))?;
    let at = q.at.unwrap_or_else(|| state.clock.now_ms());
    Ok(Json(windows_view(&monitor, &q.model, at)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub model_version: String,
    /// `allow` or `deny`.
    pub decision: String,
    pub state: dots_core::monitor::EscalationState,
}

async fn gate(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(version): Path<String>) -> ApiResult<GateDecision> {
    authorize(&state, &headers)?;
    let (allow, current) = match load_state(&state_root(&state)) {
        Some(m) => (m.gate(&version), m.state.state_of(&version)),
        None => (true, dots_core::monitor::EscalationState::Nominal),
    };
    let decision = if allow { "allow" } else { "deny" };
    Ok(Json(GateDecision { model_version: version, decision: decision.into(), state: current }))
}
