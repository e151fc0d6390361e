//! HTTP service for interactive synthesis sessions. A client creates a
//! session with initial labels, polls for the segments the synthesizer wants
//! labeled, submits labels, and finally reads the ranked queries.
//!
//! Endpoints:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/datasets` | datasets loaded at startup |
//! | POST | `/sessions` | start a session (201) |
//! | GET | `/sessions/{id}/pending?wait_ms=` | state, pending vids and render payloads; long-polls while searching |
//! | POST | `/sessions/{id}/labels` | answer pending requests |
//! | GET | `/sessions/{id}/result?rank=&vids=` | ranked queries, optionally one query's matches on held-out segments |

pub mod api;
mod error;
pub mod events;
mod session;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::Deserialize;
use vqbe_core::{SegmentRecord, SegmentStore};

use api::{CreateSession, Created, DatasetInfo, PendingResponse, ResultResponse, SubmitLabels, SubmitResponse, VidLabel};
pub use error::{ApiError, ApiJson};
use events::{Event, EventLog};
pub use session::Session;

/// Longest a single pending request may block.
pub const MAX_WAIT: Duration = Duration::from_secs(30);

struct Shared {
    datasets: BTreeMap<String, Arc<SegmentStore>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    log: Option<EventLog>,
    workers: usize,
}

/// Datasets and live sessions. Cloning shares them.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(datasets: BTreeMap<String, Arc<SegmentStore>>) -> Self {
        Self::build(datasets, None, 1)
    }

    fn build(datasets: BTreeMap<String, Arc<SegmentStore>>, log: Option<EventLog>, workers: usize) -> Self {
        Self {
            shared: Arc::new(Shared {
                datasets,
                sessions: RwLock::new(HashMap::new()),
                next_id: AtomicU64::new(1),
                log,
                workers,
            }),
        }
    }

    /// Like [`AppState::new`], with scoring parallelism per session and an
    /// event log at `log`. Sessions already in the log are replayed first.
    pub fn with_options(
        datasets: BTreeMap<String, Arc<SegmentStore>>,
        log: Option<&Path>,
        workers: usize,
    ) -> io::Result<Self> {
        let Some(path) = log else {
            return Ok(Self::build(datasets, None, workers));
        };
        let events = events::read_events(path)?;
        let state = Self::build(datasets, Some(EventLog::open(path)?), workers);
        state.replay(events).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        Ok(state)
    }

    fn replay(&self, events: Vec<Event>) -> Result<(), ApiError> {
        let mut labels: HashMap<String, Vec<VidLabel>> = HashMap::new();
        for e in &events {
            if let Event::Labels { id, labels: l } = e {
                labels.entry(id.clone()).or_default().extend(l.iter().cloned());
            }
        }
        for e in events {
            if let Event::Created { id, request } = e {
                let preload = labels.remove(&id).unwrap_or_default();
                let store = self.dataset(&request.dataset)?;
                let session = Session::start(id.clone(), &request, store, &preload, self.shared.workers)?;
                if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                    self.shared.next_id.fetch_max(n + 1, Ordering::SeqCst);
                }
                self.shared.sessions.write().insert(id, session);
            }
        }
        Ok(())
    }

    fn log(&self, event: &Event) -> Result<(), ApiError> {
        match &self.shared.log {
            Some(log) => log.append(event).map_err(|e| ApiError::internal(format!("event log: {e}"))),
            None => Ok(()),
        }
    }

    fn dataset(&self, id: &str) -> Result<Arc<SegmentStore>, ApiError> {
        self.shared
            .datasets
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown dataset {id}")))
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.shared
            .sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    pub fn create_session(&self, req: CreateSession) -> Result<Arc<Session>, ApiError> {
        let store = self.dataset(&req.dataset)?;
        let id = format!("s{}", self.shared.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Session::start(id.clone(), &req, store, &[], self.shared.workers)?;
        self.log(&Event::Created { id: id.clone(), request: Box::new(req) })?;
        self.shared.sessions.write().insert(id, session.clone());
        Ok(session)
    }

    pub fn datasets(&self) -> Vec<DatasetInfo> {
        self.shared
            .datasets
            .iter()
            .map(|(id, store)| {
                let first = store.segments().first();
                DatasetInfo {
                    id: id.clone(),
                    segments: store.len(),
                    width: first.map(|s| s.width),
                    height: first.map(|s| s.height),
                    frame_count: first.map(|s| s.frame_count),
                }
            })
            .collect()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/pending", get(get_pending))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/result", get(get_result))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn list_datasets(State(state): State<AppState>) -> Json<Vec<DatasetInfo>> {
    Json(state.datasets())
}

async fn create_session(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let session = tokio::task::spawn_blocking(move || state.create_session(req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let body = Created {
        id: session.id.clone(),
        state: session.state(),
    };
    Ok((StatusCode::CREATED, Json(body)))
}

#[derive(Debug, Deserialize)]
struct PendingParams {
    wait_ms: Option<u64>,
}

fn pending_body(session: &Session) -> PendingResponse {
    let pending = session.pending();
    let segments = pending
        .iter()
        .filter_map(|v| session.store().get(v))
        .map(SegmentRecord::from_segment)
        .collect();
    PendingResponse {
        id: session.id.clone(),
        state: session.state(),
        pending,
        segments,
        progress: session.progress(),
    }
}

async fn get_pending(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<PendingParams>,
) -> Result<Json<PendingResponse>, ApiError> {
    let session = state.session(&id)?;
    let wait = Duration::from_millis(params.wait_ms.unwrap_or(0)).min(MAX_WAIT);
    if !wait.is_zero() {
        let s = session.clone();
        tokio::task::spawn_blocking(move || s.wait_for_change(wait))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(Json(pending_body(&session)))
}

async fn submit_labels(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<SubmitLabels>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let session = state.session(&id)?;
    let accepted = session.submit(&req.labels)?;
    if accepted > 0 {
        state.log(&Event::Labels { id, labels: req.labels })?;
    }
    Ok(Json(SubmitResponse {
        accepted,
        state: session.state(),
        pending: session.pending(),
    }))
}

#[derive(Debug, Deserialize)]
struct ResultParams {
    rank: Option<usize>,
    /// Comma-separated vids for the preview; defaults to held-out segments.
    vids: Option<String>,
}

async fn get_result(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<ResultParams>,
) -> Result<axum::response::Response, ApiError> {
    use axum::response::IntoResponse;
    let session = state.session(&id)?;
    let result = session.result()?;
    let preview = match params.rank {
        Some(rank) => {
            let vids = params.vids.map(|v| v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect());
            let s = session.clone();
            let r = result.clone();
            Some(
                tokio::task::spawn_blocking(move || s.preview(&r, rank, vids))
                    .await
                    .map_err(|e| ApiError::internal(e.to_string()))??,
            )
        }
        None => None,
    };
    let body = ResultResponse {
        id: &session.id,
        state: session.state(),
        result: &result,
        preview,
    };
    Ok(Json(body).into_response())
}
