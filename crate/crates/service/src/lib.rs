//! HTTP service running human-in-the-loop optimization sessions.
//!
//! Each session owns an optimizer behind its own lock; heavy work runs on the
//! blocking pool so one session never stalls another.

pub mod api;
pub mod session;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use tower_http::services::ServeDir;

pub use api::*;
pub use session::{AssetStore, Event, Session, TaskAssets};
pub use store::{load_assets, Persistence};

type Shared = Arc<Mutex<Session>>;

pub struct AppState {
    store: Arc<AssetStore>,
    sessions: RwLock<HashMap<String, Shared>>,
    persistence: Option<Persistence>,
}

impl AppState {
    pub fn new(store: AssetStore, persistence: Option<Persistence>) -> Self {
        Self {
            store: Arc::new(store),
            sessions: RwLock::new(HashMap::new()),
            persistence,
        }
    }

    pub fn store(&self) -> &AssetStore {
        &self.store
    }

    /// Rebuilds every session found in the persistence directory. Logs that
    /// fail to replay are skipped and reported.
    pub fn restore(&self) -> Vec<(String, ApiError)> {
        let Some(p) = &self.persistence else {
            return Vec::new();
        };
        let logs = match p.load_logs() {
            Ok(l) => l,
            Err(e) => return vec![(p.dir().display().to_string(), ApiError::internal(e.to_string()))],
        };
        let mut failed = Vec::new();
        for (id, events) in logs {
            match Session::replay(&events, &self.store) {
                Ok(s) => {
                    self.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(s)));
                }
                Err(e) => {
                    tracing::warn!("session {id} not restored: {}", e.message);
                    failed.push((id, e));
                }
            }
        }
        failed
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    /// Persists events produced since `before` and snapshots on schedule.
    fn persist(&self, s: &Session, before: usize) -> Result<(), ApiError> {
        let Some(p) = &self.persistence else {
            return Ok(());
        };
        p.append(&s.id, &s.events()[before..])
            .map_err(|e| ApiError::internal(format!("event log: {e}")))?;
        let observed = s.events()[before..].iter().any(|e| matches!(e, Event::Observed { .. }));
        if observed && (p.should_snapshot(s.observations()) || s.is_complete()) {
            p.snapshot(&s.state()).map_err(|e| ApiError::internal(format!("snapshot: {e}")))?;
        }
        Ok(())
    }

    /// Writes a snapshot of every session.
    pub fn snapshot_all(&self) {
        let Some(p) = &self.persistence else {
            return;
        };
        let sessions: Vec<Shared> = self.sessions.read().unwrap().values().cloned().collect();
        for s in sessions {
            let state = s.lock().unwrap().state();
            if let Err(e) = p.snapshot(&state) {
                tracing::warn!("snapshot {}: {e}", state.id);
            }
        }
    }

    pub fn create(&self, req: CreateRequest) -> Result<CreateResponse, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let s = Session::create(id.clone(), req, &self.store)?;
        self.persist(&s, 0)?;
        let proposal = s.pending_view().ok_or_else(|| ApiError::internal("new session without a proposal"))?;
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(s)));
        Ok(CreateResponse { id, proposal })
    }

    pub fn observe(&self, id: &str, req: ObserveRequest) -> Result<ObserveResponse, ApiError> {
        let shared = self.get(id)?;
        let mut s = shared.lock().unwrap();
        let before = s.events().len();
        let out = s.observe(&req)?;
        self.persist(&s, before)?;
        Ok(out)
    }

    pub fn set_weights(&self, id: &str, req: WeightsRequest) -> Result<WeightsResponse, ApiError> {
        let shared = self.get(id)?;
        let mut s = shared.lock().unwrap();
        let before = s.events().len();
        let out = s.set_weights(&req)?;
        self.persist(&s, before)?;
        Ok(out)
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ApiError> {
        Ok(self.get(id)?.lock().unwrap().state())
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let sessions: Vec<Shared> = self.sessions.read().unwrap().values().cloned().collect();
        let mut out: Vec<SessionSummary> = sessions.iter().map(|s| s.lock().unwrap().summary()).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn create(State(app): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let out = blocking(move || app.create(req)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn observe(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ObserveRequest>,
) -> Result<Json<ObserveResponse>, ApiError> {
    Ok(Json(blocking(move || app.observe(&id, req)).await?))
}

async fn weights(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<WeightsRequest>,
) -> Result<Json<WeightsResponse>, ApiError> {
    Ok(Json(blocking(move || app.set_weights(&id, req)).await?))
}

async fn state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    Ok(Json(blocking(move || app.state(&id)).await?))
}

async fn list(State(app): State<Arc<AppState>>) -> Result<Json<Vec<SessionSummary>>, ApiError> {
    Ok(Json(blocking(move || Ok(app.list())).await?))
}

/// Builds the router. `static_dir`, when given, is served at `/`.
pub fn router(app: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(state))
        .route("/sessions/{id}/observe", post(observe))
        .route("/sessions/{id}/weights", put(weights))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c, then snapshots every session.
pub async fn serve(app: Arc<AppState>, static_dir: Option<PathBuf>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    let router = router(app.clone(), static_dir);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    app.snapshot_all();
    Ok(())
}
