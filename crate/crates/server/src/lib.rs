//! HTTP teaching service. Sessions hold a human teacher's drawn
//! demonstrations; every submission refits the TP-GMM, re-evaluates the task
//! grid and returns per-cell outcomes with entropy guidance.

mod error;
mod session;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use guidedemo::task::{Direction, TaskSpec};
use guidedemo::tpgmm::TpGmmOptions;

pub use error::{ApiError, ServerError};
pub use session::{ingest, refit, CellStatus, CellView, Ingested, Mode, Session, SessionView, CANVAS_MARGIN};
pub use store::{LogEvent, Store};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub tasks_dir: PathBuf,
    /// Session logs are kept here when set; otherwise sessions live in memory only.
    pub data_dir: Option<PathBuf>,
    /// Built UI bundle served under `/`.
    pub static_dir: Option<PathBuf>,
    /// Seeds the learner so refits are reproducible.
    pub seed: u64,
}

impl ServerConfig {
    pub fn new(tasks_dir: impl Into<PathBuf>) -> Self {
        ServerConfig { tasks_dir: tasks_dir.into(), data_dir: None, static_dir: None, seed: DEFAULT_SEED }
    }
}

type SessionRef = Arc<Mutex<Session>>;

pub struct AppState {
    tasks: BTreeMap<String, Arc<TaskSpec>>,
    sessions: RwLock<HashMap<String, SessionRef>>,
    store: Option<Store>,
    learner: TpGmmOptions,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Every `*.toml` task in `dir`, keyed by task name.
pub fn load_tasks(dir: &Path) -> Result<BTreeMap<String, Arc<TaskSpec>>, ServerError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| ServerError::Config(format!("cannot read task directory {}: {e}", dir.display())))?;
    let mut tasks = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let spec = TaskSpec::load(&path)?;
        if tasks.contains_key(&spec.name) {
            return Err(ServerError::Config(format!("duplicate task name `{}` in {}", spec.name, path.display())));
        }
        tasks.insert(spec.name.clone(), Arc::new(spec));
    }
    if tasks.is_empty() {
        return Err(ServerError::Config(format!("no task files in {}", dir.display())));
    }
    Ok(tasks)
}

impl AppState {
    /// Loads tasks and replays any persisted sessions.
    pub fn new(cfg: &ServerConfig) -> Result<Self, ServerError> {
        let tasks = load_tasks(&cfg.tasks_dir)?;
        let store = cfg.data_dir.as_ref().map(Store::open).transpose()?;
        let mut learner = TpGmmOptions::default();
        learner.em.seed = cfg.seed;
        let state = AppState { tasks, sessions: RwLock::new(HashMap::new()), store, learner };
        if let Some(store) = &state.store {
            for (id, events) in store.load_all()? {
                let session = state.replay(&id, events)?;
                state.sessions.write().expect("session map lock").insert(id, Arc::new(Mutex::new(session)));
            }
        }
        Ok(state)
    }

    pub fn tasks(&self) -> &BTreeMap<String, Arc<TaskSpec>> {
        &self.tasks
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    fn session(&self, id: &str) -> Result<SessionRef, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }

    fn replay(&self, id: &str, events: Vec<LogEvent>) -> Result<Session, ServerError> {
        let bad = |m: &str| ServerError::Config(format!("session log {id}: {m}"));
        let mut events = events.into_iter();
        let Some(LogEvent::Create { task, mode, at_ms }) = events.next() else {
            return Err(bad("first event must be `create`"));
        };
        let spec = self.tasks.get(&task).ok_or_else(|| bad(&format!("unknown task `{task}`")))?;
        let mut session = Session::new(id.to_string(), spec.clone(), mode, at_ms)?;
        for event in events {
            match event {
                LogEvent::Create { .. } => return Err(bad("repeated `create`")),
                LogEvent::Reset { at_ms } => session.reset(at_ms),
                LogEvent::Demonstration { samples, at_ms } => {
                    let ingested = ingest(&samples, spec).map_err(|e| bad(&e.to_string()))?;
                    let mut demos = session.demos().to_vec();
                    demos.push(ingested.demo.clone());
                    let (model, eval) = refit(&demos, spec, &self.learner)?;
                    session.accept(samples, ingested, model, eval, at_ms)?;
                }
            }
        }
        Ok(session)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskSummary {
    pub name: String,
    pub direction: Direction,
    pub rows: usize,
    pub cols: usize,
    pub cells: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub task: String,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_mode() -> Mode {
    Mode::Heatmap
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitDemonstration {
    /// Raw pointer samples `[t_ms, x_cm, y_cm]`.
    pub samples: Vec<[f64; 3]>,
}

async fn list_tasks(State(app): State<Arc<AppState>>) -> Json<Vec<TaskSummary>> {
    Json(
        app.tasks
            .values()
            .map(|t| TaskSummary {
                name: t.name.clone(),
                direction: t.direction,
                rows: t.grid.rows,
                cols: t.grid.cols,
                cells: t.grid_len(),
            })
            .collect(),
    )
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let spec = app.tasks.get(&body.task).ok_or_else(|| ApiError::NotFound(format!("no task `{}`", body.task)))?.clone();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let now = now_ms();
    let session = Session::new(id.clone(), spec, body.mode, now).map_err(|e| ApiError::Internal(e.to_string()))?;
    if let Some(store) = &app.store {
        store.append(&id, &LogEvent::Create { task: body.task, mode: body.mode, at_ms: now })?;
    }
    let view = session.view();
    app.sessions.write().expect("session map lock").insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id)?;
    let view = session.lock().await.view();
    Ok(Json(view))
}

async fn submit_demonstration(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<SubmitDemonstration>,
) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id)?;
    // held across the refit so submissions to one session are totally ordered
    let mut s = session.lock().await;
    let ingested = ingest(&body.samples, s.task())?;
    let mut demos = s.demos().to_vec();
    demos.push(ingested.demo.clone());
    let spec = s.task().clone();
    let opts = app.learner.clone();
    let (model, eval) = tokio::task::spawn_blocking(move || refit(&demos, &spec, &opts))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| ApiError::BadRequest(format!("cannot learn from this demonstration: {e}")))?;
    let now = now_ms();
    if let Some(store) = &app.store {
        store.append(&id, &LogEvent::Demonstration { samples: body.samples.clone(), at_ms: now })?;
    }
    s.accept(body.samples, ingested, model, eval, now).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(s.view()))
}

async fn reset_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id)?;
    let mut s = session.lock().await;
    let now = now_ms();
    if let Some(store) = &app.store {
        store.append(&id, &LogEvent::Reset { at_ms: now })?;
    }
    s.reset(now);
    Ok(Json(s.view()))
}

pub fn router(app: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/tasks", get(list_tasks))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/demonstrations", post(submit_demonstration))
        .route("/sessions/{id}/reset", post(reset_session))
        .with_state(app);
    let api = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.layer(TraceLayer::new_for_http())
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|e| ServerError::Config(format!("cannot bind {addr}: {e}")))
}

/// Serves until Ctrl-C.
pub async fn serve(listener: TcpListener, cfg: &ServerConfig) -> Result<(), ServerError> {
    let state = Arc::new(AppState::new(cfg)?);
    let addr = listener.local_addr()?;
    tracing::info!(tasks = state.tasks().len(), sessions = state.session_count(), "listening on http://{addr}");
    let app = router(state, cfg.static_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
