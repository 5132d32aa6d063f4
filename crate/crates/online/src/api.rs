//! Loopback control API: session listing, state, screenshots, decisions,
//! oracle actions, verdicts, and server-sent state events.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;
use webground_core::agent::{OracleSubmission, TaskSpec};

use crate::session::{Command, CommandError, DecisionKind, SessionShared, SessionView};
use crate::trace::{Status, Verdict};

const COMMAND_WAIT: Duration = Duration::from_secs(30);

pub struct Registry {
    sessions: RwLock<BTreeMap<String, Arc<SessionShared>>>,
    clients: Arc<AtomicUsize>,
    changes: broadcast::Sender<SessionView>,
}

/// Counts as a connected approval client while alive.
pub struct ClientGuard(Arc<AtomicUsize>);

impl Drop for ClientGuard {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Registry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self {
            sessions: RwLock::new(BTreeMap::new()),
            clients: Arc::new(AtomicUsize::new(0)),
            changes: broadcast::channel(256).0,
        })
    }

    pub fn create_session(&self, id: impl Into<String>, task: TaskSpec) -> Arc<SessionShared> {
        let id = id.into();
        let s = Arc::new(SessionShared::new(id.clone(), task, self.clients.clone(), self.changes.clone()));
        self.sessions.write().expect("registry lock").insert(id, s.clone());
        s
    }

    pub fn get(&self, id: &str) -> Option<Arc<SessionShared>> {
        self.sessions.read().expect("registry lock").get(id).cloned()
    }

    pub fn list(&self) -> Vec<Arc<SessionShared>> {
        self.sessions.read().expect("registry lock").values().cloned().collect()
    }

    pub fn approval_clients(&self) -> usize {
        self.clients.load(Ordering::SeqCst)
    }

    pub fn attach_client(&self) -> ClientGuard {
        self.clients.fetch_add(1, Ordering::SeqCst);
        ClientGuard(self.clients.clone())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SessionView> {
        self.changes.subscribe()
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
        };
        (code, Json(json!({ "error": msg }))).into_response()
    }
}

impl From<CommandError> for ApiError {
    fn from(e: CommandError) -> Self {
        match e {
            CommandError::Conflict(m) => ApiError::Conflict(m),
            CommandError::Invalid(m) => ApiError::Unprocessable(m),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::Unprocessable(e.body_text())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub task_id: String,
    pub status: Option<Status>,
    pub step_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionBody {
    pub decision: DecisionKind,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DismissBody {
    #[serde(default)]
    pub selectors: Vec<String>,
}

type Shared = State<Arc<Registry>>;

fn session(reg: &Registry, id: &str) -> Result<Arc<SessionShared>, ApiError> {
    reg.get(id).ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
}

fn require(s: &SessionShared, want: Status) -> Result<(), ApiError> {
    let have = s.view().status;
    if have != Some(want) {
        return Err(ApiError::Conflict(format!("session is {have:?}, not {want:?}")));
    }
    Ok(())
}

async fn list(State(reg): Shared) -> Json<Vec<SessionSummary>> {
    Json(
        reg.list()
            .iter()
            .map(|s| {
                let v = s.view();
                SessionSummary {
                    session_id: v.session_id,
                    task_id: v.task.task_id,
                    status: v.status,
                    step_count: v.step_count,
                }
            })
            .collect(),
    )
}

async fn state(State(reg): Shared, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(session(&reg, &id)?.view()))
}

async fn screenshot(State(reg): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let png = session(&reg, &id)?.screenshot().ok_or_else(|| ApiError::NotFound("no screenshot yet".into()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.bytes().to_vec()).into_response())
}

async fn decision(State(reg): Shared, Path(id): Path<String>, body: Result<Json<DecisionBody>, JsonRejection>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = session(&reg, &id)?;
    let Json(body) = body?;
    require(&s, Status::AwaitingApproval)?;
    s.send(|reply| Command::Decision { kind: body.decision, reply }, COMMAND_WAIT).await?;
    Ok(Json(json!({ "ok": true })))
}

async fn oracle(State(reg): Shared, Path(id): Path<String>, body: Result<Json<OracleSubmission>, JsonRejection>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = session(&reg, &id)?;
    let Json(sub) = body?;
    sub.validate().map_err(ApiError::Unprocessable)?;
    if let Some(el) = &sub.element_id {
        if !s.knows_element(el) {
            return Err(ApiError::Unprocessable(format!("element {el} is not on the current page")));
        }
    }
    if !s.view().awaiting_oracle {
        return Err(ApiError::Conflict("session is not waiting for an oracle action".into()));
    }
    s.send(|reply| Command::Oracle { submission: sub, reply }, COMMAND_WAIT).await?;
    Ok(Json(json!({ "ok": true })))
}

async fn verdict(State(reg): Shared, Path(id): Path<String>, body: Result<Json<Verdict>, JsonRejection>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = session(&reg, &id)?;
    let Json(v) = body?;
    require(&s, Status::AwaitingVerdict)?;
    s.send(|reply| Command::Verdict { verdict: v, reply }, COMMAND_WAIT).await?;
    Ok(Json(json!({ "ok": true })))
}

async fn dismiss(State(reg): Shared, Path(id): Path<String>, body: Result<Json<DismissBody>, JsonRejection>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = session(&reg, &id)?;
    let Json(b) = body?;
    if b.selectors.is_empty() {
        return Err(ApiError::Unprocessable("selectors must not be empty".into()));
    }
    require(&s, Status::AwaitingApproval)?;
    s.send(|reply| Command::Dismiss { selectors: b.selectors, reply }, COMMAND_WAIT).await?;
    Ok(Json(json!({ "ok": true })))
}

fn state_event(v: &SessionView) -> Result<Event, Infallible> {
    Ok(Event::default().event("state").json_data(v).unwrap_or_else(|_| Event::default().event("error")))
}

async fn session_events(State(reg): Shared, Path(id): Path<String>) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let s = session(&reg, &id)?;
    let guard = reg.attach_client();
    let mut rx = s.subscribe();
    let first = state_event(&rx.borrow_and_update());
    let rest = stream::unfold((rx, guard), |(mut rx, guard)| async move {
        rx.changed().await.ok()?;
        let ev = state_event(&rx.borrow_and_update());
        Some((ev, (rx, guard)))
    });
    Ok(Sse::new(stream::once(async { first }).chain(rest)).keep_alive(KeepAlive::default()))
}

async fn all_events(State(reg): Shared) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let guard = reg.attach_client();
    let rx = reg.subscribe();
    let hello = Ok(Event::default().event("hello").data(reg.list().len().to_string()));
    let rest = stream::unfold((rx, guard), |(mut rx, guard)| async move {
        loop {
            match rx.recv().await {
                Ok(v) => return Some((state_event(&v), (rx, guard))),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream::once(async { hello }).chain(rest)).keep_alive(KeepAlive::default())
}

pub fn router(reg: Arc<Registry>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/events", get(all_events))
        .route("/sessions", get(list))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/screenshot.png", get(screenshot))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/decision", post(decision))
        .route("/sessions/{id}/oracle", post(oracle))
        .route("/sessions/{id}/verdict", post(verdict))
        .route("/sessions/{id}/dismiss", post(dismiss))
        .with_state(reg)
}

/// Binds `addr` (loopback by default in the CLI) and serves in the background.
pub async fn serve(router: Router, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "http server stopped");
        }
    });
    Ok((bound, handle))
}

/// Serves a static directory, e.g. the bundled fixture site.
pub async fn serve_dir(dir: &std::path::Path, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} is not a directory", dir.display())));
    }
    let app = Router::new().fallback_service(tower_http::services::ServeDir::new(dir));
    serve(app, addr).await
}
