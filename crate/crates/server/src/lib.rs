//! JSON-over-HTTP labelling service.
//!
//! The experiment thread announces sessions through a [`HumanEndpoint`]; a
//! bridge thread stores them, HTTP handlers read them and record labels, and
//! the completed label list goes back over the endpoint's reply channel.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | GET | `/api/session` | [`SessionInfo`] |
//! | GET | `/api/session/{id}/pending` | [`PendingResponse`] |
//! | POST | `/api/session/{id}/label` | [`LabelRequest`] → [`LabelAck`] |
//! | GET | `/api/session/{id}/state` | [`StateResponse`] |
//!
//! Errors carry an [`ErrorBody`] with status 404 (unknown session or pair),
//! 409 (pair already labelled) or 400/415/422 (malformed request).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use reed_core::orchestrator::{HumanEndpoint, HumanReply, HumanSession, PendingQuery};
use reed_core::teachers::Label;

pub const API_VERSION: u32 = 1;

/// What a human can answer for one pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    First,
    Second,
    Equal,
    Skip,
}

impl Choice {
    pub fn label(self) -> Label {
        match self {
            Choice::First => Label::PreferFirst,
            Choice::Second => Label::PreferSecond,
            Choice::Equal => Label::Equal,
            Choice::Skip => Label::Discard,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// No session is waiting for labels.
    Idle,
    /// A session has unlabelled pairs.
    Labeling,
    /// The experiment has ended.
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub api_version: u32,
    pub status: Status,
    pub session: Option<u64>,
    pub pending: usize,
    pub experiment_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingResponse {
    pub api_version: u32,
    pub session: u64,
    pub pairs: Vec<PendingQuery>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub pair_id: u64,
    pub choice: Choice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub api_version: u32,
    pub session: u64,
    pub pair_id: u64,
    pub choice: Choice,
    pub remaining: usize,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub api_version: u32,
    pub session: u64,
    pub pending: usize,
    pub completed: bool,
    /// Answered pairs that were not skipped.
    pub labels_collected: usize,
    pub experiment_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub api_version: u32,
    pub error: String,
}

#[derive(Debug, PartialEq)]
pub enum ApiError {
    UnknownSession(u64),
    UnknownPair { session: u64, pair_id: u64 },
    AlreadyLabeled { session: u64, pair_id: u64, existing: Choice },
    Malformed { status: StatusCode, message: String },
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::UnknownSession(id) => (StatusCode::NOT_FOUND, format!("unknown session {id}")),
            ApiError::UnknownPair { session, pair_id } => {
                (StatusCode::NOT_FOUND, format!("session {session} has no pair {pair_id}"))
            }
            ApiError::AlreadyLabeled {
                session,
                pair_id,
                existing,
            } => (
                StatusCode::CONFLICT,
                format!("pair {pair_id} of session {session} is already labelled {existing:?}"),
            ),
            ApiError::Malformed { status, message } => (status, message),
        };
        let body = ErrorBody {
            api_version: API_VERSION,
            error,
        };
        (status, Json(body)).into_response()
    }
}

struct LabelSession {
    step: u64,
    queries: Vec<PendingQuery>,
    choices: Vec<Option<Choice>>,
}

impl LabelSession {
    fn remaining(&self) -> usize {
        self.choices.iter().filter(|c| c.is_none()).count()
    }
}

/// All sessions seen so far. Mutated only under its mutex.
#[derive(Default)]
pub struct Store {
    sessions: BTreeMap<u64, LabelSession>,
    active: Option<u64>,
    experiment_step: u64,
    finished: bool,
    replies: Option<Sender<HumanReply>>,
}

pub type SharedStore = Arc<Mutex<Store>>;

fn lock(store: &SharedStore) -> MutexGuard<'_, Store> {
    store.lock().unwrap_or_else(|e| e.into_inner())
}

impl Store {
    pub fn shared() -> SharedStore {
        Arc::new(Mutex::new(Store::default()))
    }

    /// Registers a session announced by the experiment; re-announcements are ignored.
    pub fn open(&mut self, session: HumanSession) {
        self.experiment_step = self.experiment_step.max(session.step);
        if self.sessions.contains_key(&session.session) {
            return;
        }
        let n = session.queries.len();
        self.sessions.insert(
            session.session,
            LabelSession {
                step: session.step,
                queries: session.queries,
                choices: vec![None; n],
            },
        );
        self.active = Some(session.session);
    }

    pub fn set_experiment_step(&mut self, step: u64) {
        self.experiment_step = self.experiment_step.max(step);
    }

    pub fn mark_finished(&mut self) {
        self.finished = true;
    }

    pub fn info(&self) -> SessionInfo {
        let pending = self
            .active
            .and_then(|id| self.sessions.get(&id))
            .map_or(0, LabelSession::remaining);
        let status = if self.finished {
            Status::Finished
        } else if pending > 0 {
            Status::Labeling
        } else {
            Status::Idle
        };
        SessionInfo {
            api_version: API_VERSION,
            status,
            session: self.active,
            pending,
            experiment_step: self.experiment_step,
        }
    }

    fn session(&self, id: u64) -> Result<&LabelSession, ApiError> {
        self.sessions.get(&id).ok_or(ApiError::UnknownSession(id))
    }

    pub fn pending(&self, id: u64) -> Result<PendingResponse, ApiError> {
        let s = self.session(id)?;
        let pairs = s
            .queries
            .iter()
            .zip(&s.choices)
            .filter(|(_, c)| c.is_none())
            .map(|(q, _)| q.clone())
            .collect();
        Ok(PendingResponse {
            api_version: API_VERSION,
            session: id,
            pairs,
        })
    }

    pub fn state(&self, id: u64) -> Result<StateResponse, ApiError> {
        let s = self.session(id)?;
        let remaining = s.remaining();
        Ok(StateResponse {
            api_version: API_VERSION,
            session: id,
            pending: remaining,
            completed: remaining == 0,
            labels_collected: s.choices.iter().filter(|c| matches!(c, Some(c) if *c != Choice::Skip)).count(),
            experiment_step: self.experiment_step.max(s.step),
        })
    }

    /// Records one label; the first label of a pair wins. Completing a session
    /// sends its labels to the experiment.
    pub fn submit(&mut self, id: u64, req: &LabelRequest) -> Result<LabelAck, ApiError> {
        let s = self.sessions.get_mut(&id).ok_or(ApiError::UnknownSession(id))?;
        let slot = s
            .choices
            .get_mut(req.pair_id as usize)
            .ok_or(ApiError::UnknownPair {
                session: id,
                pair_id: req.pair_id,
            })?;
        if let Some(existing) = *slot {
            return Err(ApiError::AlreadyLabeled {
                session: id,
                pair_id: req.pair_id,
                existing,
            });
        }
        *slot = Some(req.choice);
        let remaining = s.remaining();
        if remaining == 0 {
            let labels = s.choices.iter().map(|c| c.expect("all answered").label()).collect();
            if let Some(tx) = &self.replies {
                // The experiment may already be gone; the labels stay visible here.
                let _ = tx.send(HumanReply { session: id, labels });
            }
            if self.active == Some(id) {
                self.active = None;
            }
        }
        Ok(LabelAck {
            api_version: API_VERSION,
            session: id,
            pair_id: req.pair_id,
            choice: req.choice,
            remaining,
            completed: remaining == 0,
        })
    }
}

/// Moves sessions from the experiment into `store` until the experiment hangs up.
pub fn attach(endpoint: HumanEndpoint, store: SharedStore) -> JoinHandle<()> {
    let HumanEndpoint { requests, replies } = endpoint;
    lock(&store).replies = Some(replies);
    std::thread::spawn(move || {
        while let Ok(session) = requests.recv() {
            lock(&store).open(session);
        }
    })
}

async fn get_session(State(store): State<SharedStore>) -> Json<SessionInfo> {
    Json(lock(&store).info())
}

async fn get_pending(State(store): State<SharedStore>, Path(id): Path<u64>) -> Result<Json<PendingResponse>, ApiError> {
    lock(&store).pending(id).map(Json)
}

async fn get_state(State(store): State<SharedStore>, Path(id): Path<u64>) -> Result<Json<StateResponse>, ApiError> {
    lock(&store).state(id).map(Json)
}

async fn post_label(
    State(store): State<SharedStore>,
    Path(id): Path<u64>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<LabelAck>, ApiError> {
    let Json(req) = body.map_err(|r| ApiError::Malformed {
        status: r.status(),
        message: r.body_text(),
    })?;
    lock(&store).submit(id, &req).map(Json)
}

/// The API routes, plus static files from `static_dir` for every other path.
pub fn router(store: SharedStore, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", get(get_session))
        .route("/api/session/{id}/pending", get(get_pending))
        .route("/api/session/{id}/state", get(get_state))
        .route("/api/session/{id}/label", post(post_label))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: &str, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
