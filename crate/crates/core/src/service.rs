//! JSON-over-HTTP API for the review UI.
//!
//! | method | path                       | auth  |
//! |--------|----------------------------|-------|
//! | GET    | `/api/task/next`           | token |
//! | POST   | `/api/task/{id}/decision`  | token |
//! | GET    | `/api/progress`            | none  |
//! | GET    | `/api/export`              | token |
//!
//! Tokens come from a static roster and are sent as `Authorization: Bearer <token>`.
//! All state changes go through one lock, so per-task transitions are serialized.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::store::{Progress, Store, StoreError};
use crate::verification::{to_json_lines, Decision, ResolutionPath, Role, TaskStatus, Verdict, VerificationTask};

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("failed to read roster {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid roster: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub annotator_id: String,
    #[serde(default)]
    pub role: Role,
    pub token: String,
    /// Free-form qualification data; recorded, never enforced.
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default)]
pub struct Roster {
    by_token: HashMap<String, RosterEntry>,
}

impl Roster {
    pub fn new(entries: Vec<RosterEntry>) -> Result<Self, RosterError> {
        let mut by_token = HashMap::new();
        let mut ids = HashSet::new();
        for e in entries {
            if e.token.is_empty() {
                return Err(RosterError::Invalid(format!("empty token for `{}`", e.annotator_id)));
            }
            if !ids.insert(e.annotator_id.clone()) {
                return Err(RosterError::Invalid(format!("duplicate annotator `{}`", e.annotator_id)));
            }
            if by_token.contains_key(&e.token) {
                return Err(RosterError::Invalid(format!("token of `{}` is not unique", e.annotator_id)));
            }
            by_token.insert(e.token.clone(), e);
        }
        Ok(Roster { by_token })
    }

    /// Reads a JSON array of roster entries.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RosterError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RosterError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let entries: Vec<RosterEntry> = serde_json::from_str(&text).map_err(|e| RosterError::Invalid(e.to_string()))?;
        Self::new(entries)
    }

    pub fn authenticate(&self, token: &str) -> Option<&RosterEntry> {
        self.by_token.get(token)
    }
}

struct Inner {
    store: Store,
    /// Tasks ever handed to each annotator.
    served: HashMap<String, HashSet<String>>,
    /// Handed out but not yet decided, per task.
    pending: HashMap<String, HashSet<String>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    roster: Arc<Roster>,
}

impl AppState {
    pub fn new(store: Store, roster: Roster) -> Self {
        AppState {
            inner: Arc::new(Mutex::new(Inner {
                store,
                served: HashMap::new(),
                pending: HashMap::new(),
            })),
            roster: Arc::new(roster),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    /// Decision log as currently stored.
    pub fn decisions(&self) -> Vec<Decision> {
        self.lock().store.decisions().to_vec()
    }

    pub fn progress(&self) -> Progress {
        self.lock().store.progress()
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("missing or unknown token")]
    Unauthorized,
    #[error("no task {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn caller<'a>(state: &'a AppState, headers: &HeaderMap) -> Result<&'a RosterEntry, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(ApiError::Unauthorized)?;
    state.roster.authenticate(token.trim()).ok_or(ApiError::Unauthorized)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextTask {
    pub task: Option<VerificationTask>,
}

fn pick_task(inner: &Inner, who: &RosterEntry) -> Option<String> {
    let served = inner.served.get(&who.annotator_id);
    let mut best: Option<(usize, usize, &str)> = None;
    for (order, t) in inner.store.tasks().iter().enumerate() {
        let id = t.task_id.as_str();
        if served.is_some_and(|s| s.contains(id)) || inner.store.decision_of(id, &who.annotator_id).is_some() {
            continue;
        }
        let status = inner.store.state(id).status;
        let pending = inner.pending.get(id).map_or(0, HashSet::len);
        let load = match (who.role, status) {
            (Role::Annotator, TaskStatus::Open) => inner.store.filled_slots(id) + pending,
            (Role::Adjudicator, TaskStatus::Conflicted) => pending,
            _ => continue,
        };
        // Free slots first; a task already covered by others is only a fallback.
        if best.is_none_or(|(l, o, _)| (load, order) < (l, o)) {
            best = Some((load, order, id));
        }
    }
    best.map(|(_, _, id)| id.to_string())
}

async fn next_task(State(state): State<AppState>, headers: HeaderMap) -> Result<Json<NextTask>, ApiError> {
    let who = caller(&state, &headers)?.clone();
    let mut inner = state.lock();
    let Some(id) = pick_task(&inner, &who) else {
        return Ok(Json(NextTask { task: None }));
    };
    inner.served.entry(who.annotator_id.clone()).or_default().insert(id.clone());
    inner.pending.entry(id.clone()).or_default().insert(who.annotator_id.clone());
    Ok(Json(NextTask {
        task: inner.store.task(&id),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub verdict: Verdict,
    /// Client-chosen id making retries of the same submission harmless.
    #[serde(default)]
    pub submission_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionAck {
    pub task_id: String,
    pub status: TaskStatus,
    pub verdict: Option<Verdict>,
    pub path: Option<ResolutionPath>,
    /// True when this repeats an already recorded submission.
    pub replayed: bool,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn submit_decision(
    State(state): State<AppState>,
    UrlPath(task_id): UrlPath<String>,
    headers: HeaderMap,
    Json(req): Json<DecisionRequest>,
) -> Result<Json<DecisionAck>, ApiError> {
    let who = caller(&state, &headers)?.clone();
    let mut inner = state.lock();
    if inner.store.task(&task_id).is_none() {
        return Err(ApiError::NotFound(task_id));
    }
    let ack = |inner: &Inner, replayed| {
        let s = inner.store.state(&task_id);
        DecisionAck {
            task_id: task_id.clone(),
            status: s.status,
            verdict: s.verdict,
            path: s.path,
            replayed,
        }
    };
    if let Some(prev) = inner.store.decision_of(&task_id, &who.annotator_id) {
        if req.submission_id.is_some() && prev.submission_id == req.submission_id {
            return Ok(Json(ack(&inner, true)));
        }
        return Err(ApiError::Conflict(format!(
            "`{}` already decided task {task_id}",
            who.annotator_id
        )));
    }
    let status = inner.store.state(&task_id).status;
    match (who.role, status) {
        (Role::Annotator, TaskStatus::Open) | (Role::Adjudicator, TaskStatus::Conflicted) => {}
        (_, status) => {
            return Err(ApiError::Conflict(format!(
                "task {task_id} is {} and not open to {:?} decisions",
                serde_json::to_value(status).expect("serializable").as_str().unwrap_or_default(),
                who.role
            )))
        }
    }
    let decision = Decision {
        task_id: task_id.clone(),
        annotator_id: who.annotator_id.clone(),
        verdict: req.verdict,
        timestamp: now_ms(),
        role: who.role,
        submission_id: req.submission_id,
    };
    inner.store.append_decision(decision).map_err(|e| match e {
        StoreError::Duplicate { .. } => ApiError::Conflict(e.to_string()),
        StoreError::UnknownTask(id) => ApiError::NotFound(id),
        other => ApiError::Internal(other.to_string()),
    })?;
    if let Some(p) = inner.pending.get_mut(&task_id) {
        p.remove(&who.annotator_id);
    }
    Ok(Json(ack(&inner, false)))
}

async fn progress(State(state): State<AppState>) -> Json<Progress> {
    Json(state.progress())
}

async fn export(State(state): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    caller(&state, &headers)?;
    let body = to_json_lines(&state.decisions());
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/task/next", get(next_task))
        .route("/api/task/{id}/decision", post(submit_decision))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
