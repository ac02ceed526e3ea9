//! HTTP job service over the exploration pipeline.
//!
//! Long-running work (data context builds, question runs) is accepted with
//! `202` and a job id, executed on a bounded worker pool, and polled through
//! `GET /jobs/{id}`. Jobs and sessions are written to disk as they change.
//!
//! | Method | Path | Body | Success |
//! |---|---|---|---|
//! | GET | `/health` | | `200 {"status":"ok"}` |
//! | POST | `/datasources` | `{"url"}` | `202 {"job_id","datasource_id"}` |
//! | GET | `/datasources` | | `200 [DataSourceStatus]` |
//! | GET | `/datasources/{id}` | | `200 DataSourceStatus` |
//! | GET | `/datasources/{id}/suggestions` | | `200 [SuggestedQuestion]` |
//! | GET | `/jobs/{id}` | | `200 Job` |
//! | POST | `/sessions` | `{"datasource_id"}` | `201 Session` |
//! | GET | `/sessions/{id}` | | `200 Session` |
//! | POST | `/sessions/{id}/questions` | `{"question"}` | `202 {"job_id"}` |
//! | POST | `/feedback` | `{"datasource_id","id","satisfied"}` | `200 {"recorded":true}` |
//!
//! Errors are `{"error": text}` with 400 (bad request), 401 (missing or
//! wrong `x-api-key` when a key is configured), 404 (unknown id), 409 (data
//! context not built) or 503 (job queue full).

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tokio::task::JoinHandle;

use edakit_core::config::{ProviderSpec, Settings};
use edakit_core::db::DataSourceUrl;
use edakit_core::domain::{ChartSpec, ClarifiedTask, DecompositionPlan, SqlArtifact, SuggestedQuestion};
use edakit_core::hdc::HdcArtifacts;
use edakit_core::llm::Gateway;
use edakit_core::pipeline::{AnswerBundle, Pipeline};
use edakit_core::vector::{Embedder, VectorIndex};
use edakit_core::workspace::{datasource_id, DataSourceRecord, Workspace};

pub const API_KEY_HEADER: &str = "x-api-key";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("missing or invalid API key")]
    Unauthorized,
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("job queue is full; retry later")]
    Saturated,
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Saturated => StatusCode::SERVICE_UNAVAILABLE,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    HdcBuild,
    QuestionRun,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }

    /// Allowed moves: queued to running, running to done or failed. A queued
    /// job may also fail directly, e.g. when the server stops first.
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (Self::Queued, Self::Running) | (Self::Queued, Self::Failed) | (Self::Running, Self::Done) | (Self::Running, Self::Failed)
        )
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The answer bundle of a question run, or the build summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Turn {
    pub job_id: String,
    pub question: String,
    pub clarified: ClarifiedTask,
    pub plan: DecompositionPlan,
    pub artifacts: Vec<SqlArtifact>,
    pub charts: Vec<ChartSpec>,
    pub failed_steps: Vec<usize>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub datasource_id: String,
    pub history: Vec<Turn>,
}

#[derive(Serialize, Clone, Debug, PartialEq)]
pub struct DataSourceStatus {
    pub id: String,
    pub url: String,
    pub database: String,
    pub tables: Vec<String>,
    pub ready: bool,
}

pub struct ServerConfig {
    pub workspace: Workspace,
    pub settings: Settings,
    pub provider: ProviderSpec,
    /// Jobs executing at once.
    pub workers: usize,
    /// Jobs accepted but not finished, including running ones.
    pub queue_capacity: usize,
    pub api_key: Option<String>,
    /// Used instead of building one from `provider`, e.g. to share usage
    /// counters with an embedding program.
    pub gateway: Option<Arc<Gateway>>,
}

struct Context {
    pipeline: Pipeline,
    hdc: HdcArtifacts,
}

pub struct AppState {
    workspace: Workspace,
    settings: Settings,
    gateway: Arc<Gateway>,
    embedder: Arc<dyn Embedder>,
    api_key: Option<String>,
    jobs: Mutex<HashMap<String, Job>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    contexts: RwLock<HashMap<String, Arc<Context>>>,
    indexes: Mutex<HashMap<String, Arc<VectorIndex>>>,
    /// Latest bind per datasource; an older build never replaces a newer one.
    generations: Mutex<HashMap<String, u64>>,
    builds: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    workers: Arc<Semaphore>,
    pending: Arc<Semaphore>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn write_json(path: &Path, value: &impl Serialize) {
    let text = serde_json::to_string_pretty(value).expect("state serializes");
    let tmp = path.with_extension("tmp");
    let written = path
        .parent()
        .map_or(Ok(()), std::fs::create_dir_all)
        .and_then(|_| std::fs::write(&tmp, text))
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = written {
        log::error!("could not persist {}: {e}", path.display());
    }
}

fn read_dir_json<T: for<'de> Deserialize<'de>>(dir: &Path) -> Vec<T> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .filter_map(|p| std::fs::read_to_string(p).ok())
        .filter_map(|t| serde_json::from_str(&t).ok())
        .collect()
}

fn new_id(prefix: &str) -> String {
    format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
}

impl AppState {
    /// Restores jobs, sessions and every built data context from the
    /// workspace. Jobs left unfinished by a previous process are failed.
    pub fn new(config: ServerConfig) -> Result<Arc<Self>, String> {
        let gateway = match config.gateway {
            Some(g) => g,
            None => Arc::new(config.settings.gateway(&config.provider).map_err(|e| e.to_string())?),
        };
        let embedder = config.settings.embedder().map_err(|e| e.to_string())?;
        let workers = config.workers.max(1);
        let state = Arc::new(Self {
            workspace: config.workspace,
            settings: config.settings,
            gateway,
            embedder,
            api_key: config.api_key.filter(|k| !k.is_empty()),
            jobs: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
            contexts: RwLock::new(HashMap::new()),
            indexes: Mutex::new(HashMap::new()),
            generations: Mutex::new(HashMap::new()),
            builds: Mutex::new(HashMap::new()),
            workers: Arc::new(Semaphore::new(workers)),
            pending: Arc::new(Semaphore::new(config.queue_capacity.max(workers))),
            tasks: Mutex::new(Vec::new()),
        });
        for mut job in read_dir_json::<Job>(&state.jobs_dir()) {
            if !job.state.is_terminal() {
                job.state = JobState::Failed;
                job.error = Some("interrupted by a server restart".into());
                state.persist_job(&job);
            }
            lock(&state.jobs).insert(job.id.clone(), job);
        }
        for session in read_dir_json::<Session>(&state.sessions_dir()) {
            lock(&state.sessions).insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        for record in state.workspace.list() {
            match state.load_context(&record) {
                Ok(Some(ctx)) => {
                    state.contexts.write().unwrap_or_else(|e| e.into_inner()).insert(record.id.clone(), Arc::new(ctx));
                }
                Ok(None) => {}
                Err(e) => log::warn!("data context of {} not loaded: {e}", record.id),
            }
        }
        Ok(state)
    }

    fn jobs_dir(&self) -> PathBuf {
        self.workspace.root().join("jobs")
    }

    fn sessions_dir(&self) -> PathBuf {
        self.workspace.root().join("sessions")
    }

    fn persist_job(&self, job: &Job) {
        write_json(&self.jobs_dir().join(format!("{}.json", job.id)), job);
    }

    fn persist_session(&self, session: &Session) {
        write_json(&self.sessions_dir().join(format!("{}.json", session.id)), session);
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        lock(&self.jobs).get(id).cloned()
    }

    fn index_for(&self, id: &str) -> Result<Arc<VectorIndex>, String> {
        let mut indexes = lock(&self.indexes);
        if let Some(i) = indexes.get(id) {
            return Ok(i.clone());
        }
        let record = self.workspace.record(id).map_err(|e| e.to_string())?;
        let index = Arc::new(self.workspace.open_index(&record, self.embedder.clone()).map_err(|e| e.to_string())?);
        indexes.insert(id.to_string(), index.clone());
        Ok(index)
    }

    fn load_context(&self, record: &DataSourceRecord) -> Result<Option<Context>, String> {
        let Some(hdc) = self.workspace.load_hdc(record).map_err(|e| e.to_string())? else {
            return Ok(None);
        };
        let index = self.index_for(&record.id)?;
        let db = self.workspace.open_db(record).map_err(|e| e.to_string())?;
        let pipeline = Pipeline::new(self.gateway.clone(), index, db, self.settings.pipeline.clone());
        Ok(Some(Context { pipeline, hdc }))
    }

    fn context(&self, id: &str) -> Option<Arc<Context>> {
        self.contexts.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    /// Moves a job forward; a move the state machine forbids is ignored.
    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        let snapshot = {
            let mut jobs = lock(&self.jobs);
            let Some(job) = jobs.get_mut(id) else { return };
            let before = job.state;
            let mut next = job.clone();
            f(&mut next);
            if next.state != before && !before.can_become(next.state) {
                log::error!("job {id}: refused move {before:?} -> {:?}", next.state);
                return;
            }
            *job = next;
            job.clone()
        };
        self.persist_job(&snapshot);
    }

    /// Queues `work` on the worker pool and returns its job id at once.
    fn submit<F>(self: &Arc<Self>, kind: JobKind, result_ref: Option<String>, work: F) -> Result<String, ApiError>
    where
        F: FnOnce(&Progress) -> Result<Value, String> + Send + 'static,
    {
        let pending = self.pending.clone().try_acquire_owned().map_err(|_| ApiError::Saturated)?;
        let id = new_id("job");
        let job = Job {
            id: id.clone(),
            kind,
            state: JobState::Queued,
            progress: "queued".into(),
            result_ref,
            error: None,
            result: None,
        };
        self.persist_job(&job);
        lock(&self.jobs).insert(id.clone(), job);
        let state = self.clone();
        let job_id = id.clone();
        let handle = tokio::spawn(async move {
            let _pending = pending;
            let Ok(_worker) = state.workers.clone().acquire_owned().await else {
                return;
            };
            state.update(&job_id, |j| {
                j.state = JobState::Running;
                j.progress = "running".into();
            });
            let progress = Progress {
                state: state.clone(),
                job_id: job_id.clone(),
            };
            let outcome = tokio::task::spawn_blocking(move || work(&progress)).await;
            state.update(&job_id, |j| match outcome {
                Ok(Ok(value)) => {
                    j.state = JobState::Done;
                    j.progress = "done".into();
                    j.result = Some(value);
                }
                Ok(Err(e)) => {
                    j.state = JobState::Failed;
                    j.progress = "failed".into();
                    j.error = Some(e);
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    j.progress = "failed".into();
                    j.error = Some(format!("worker crashed: {e}"));
                }
            });
        });
        let mut tasks = lock(&self.tasks);
        tasks.retain(|t| !t.is_finished());
        tasks.push(handle);
        Ok(id)
    }

    /// Waits for every accepted job to finish.
    pub async fn drain(&self) {
        let handles: Vec<JoinHandle<()>> = std::mem::take(&mut *lock(&self.tasks));
        for h in handles {
            let _ = h.await;
        }
    }

    fn bind(self: &Arc<Self>, url: String, datasource: String) -> Result<String, ApiError> {
        let generation = {
            let mut g = lock(&self.generations);
            let n = g.entry(datasource.clone()).or_insert(0);
            *n += 1;
            *n
        };
        let state = self.clone();
        self.submit(JobKind::HdcBuild, Some(datasource.clone()), move |progress| {
            let guard = lock(&state.builds).entry(datasource.clone()).or_default().clone();
            let _serial = lock(&guard);
            progress.set("connecting");
            let record = state.workspace.ingest(&url).map_err(|e| e.to_string())?;
            progress.set("building data context");
            let index = state.index_for(&record.id)?;
            let (hdc, report) = state
                .workspace
                .build(&record, state.gateway.clone(), index.clone(), &state.settings.pipeline)
                .map_err(|e| e.to_string())?;
            let db = state.workspace.open_db(&record).map_err(|e| e.to_string())?;
            let pipeline = Pipeline::new(state.gateway.clone(), index, db, state.settings.pipeline.clone());
            let summary = json!({
                "datasource_id": record.id,
                "database": hdc.database,
                "counts": report.counts,
                "skipped": report.skipped,
                "warnings": report.warnings,
                "report_path": state.workspace.report_path(&record.id),
            });
            let latest = lock(&state.generations).get(&datasource).copied() == Some(generation);
            if latest {
                state
                    .contexts
                    .write()
                    .unwrap_or_else(|e| e.into_inner())
                    .insert(record.id.clone(), Arc::new(Context { pipeline, hdc }));
            }
            Ok(summary)
        })
    }

    fn ask(self: &Arc<Self>, session: Arc<Mutex<Session>>, datasource: String, question: String) -> Result<String, ApiError> {
        let ctx = self
            .context(&datasource)
            .ok_or_else(|| ApiError::Conflict(format!("data context for {datasource} is not built yet")))?;
        let state = self.clone();
        self.submit(JobKind::QuestionRun, None, move |progress| {
            progress.set("answering");
            let bundle: AnswerBundle = ctx.pipeline.ask(&ctx.hdc, &question).map_err(|e| e.to_string())?;
            let value = serde_json::to_value(&bundle).map_err(|e| e.to_string())?;
            let mut s = lock(&session);
            s.history.push(Turn {
                job_id: progress.job_id.clone(),
                question: bundle.question,
                clarified: bundle.clarified,
                plan: bundle.plan,
                artifacts: bundle.artifacts,
                charts: bundle.charts,
                failed_steps: bundle.failed_steps,
            });
            state.persist_session(&s);
            Ok(value)
        })
    }

    fn status(&self, record: DataSourceRecord) -> DataSourceStatus {
        DataSourceStatus {
            ready: self.context(&record.id).is_some(),
            id: record.id,
            url: record.url,
            database: record.database,
            tables: record.tables,
        }
    }
}

/// Lets a running job report what it is doing.
pub struct Progress {
    state: Arc<AppState>,
    job_id: String,
}

impl Progress {
    pub fn set(&self, text: &str) {
        self.state.update(&self.job_id, |j| j.progress = text.to_string());
    }
}

type Shared = State<Arc<AppState>>;

async fn require_key(State(state): Shared, headers: HeaderMap, request: Request, next: Next) -> Response {
    if let Some(key) = &state.api_key {
        if request.uri().path() != "/health" {
            let given = headers.get(API_KEY_HEADER).and_then(|v| v.to_str().ok());
            if given != Some(key.as_str()) {
                return ApiError::Unauthorized.into_response();
            }
        }
    }
    next.run(request).await
}

fn body<T: for<'de> Deserialize<'de>>(payload: Result<Json<T>, axum::extract::rejection::JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(b)| b).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct BindRequest {
    url: String,
}

async fn post_datasource(
    State(state): Shared,
    payload: Result<Json<BindRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req = body(payload)?;
    DataSourceUrl::parse(&req.url).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let id = datasource_id(&req.url).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let job = state.bind(req.url, id.clone())?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job, "datasource_id": id }))))
}

async fn list_datasources(State(state): Shared) -> Json<Vec<DataSourceStatus>> {
    let records = state.workspace.list();
    Json(records.into_iter().map(|r| state.status(r)).collect())
}

async fn get_datasource(State(state): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<DataSourceStatus>, ApiError> {
    let record = state
        .workspace
        .record(&id)
        .map_err(|_| ApiError::NotFound(format!("unknown datasource {id}")))?;
    Ok(Json(state.status(record)))
}

async fn suggestions(State(state): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<SuggestedQuestion>>, ApiError> {
    let ctx = state
        .context(&id)
        .ok_or_else(|| ApiError::NotFound(format!("no data context for {id}")))?;
    Ok(Json(ctx.hdc.questions.clone()))
}

async fn get_job(State(state): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Job>, ApiError> {
    state.job(&id).map(Json).ok_or_else(|| ApiError::NotFound(format!("unknown job {id}")))
}

#[derive(Deserialize)]
struct SessionRequest {
    datasource_id: String,
}

async fn post_session(
    State(state): Shared,
    payload: Result<Json<SessionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<Session>), ApiError> {
    let req = body(payload)?;
    let known = state.workspace.record(&req.datasource_id).is_ok()
        || lock(&state.generations).contains_key(&req.datasource_id);
    if !known {
        return Err(ApiError::NotFound(format!("unknown datasource {}", req.datasource_id)));
    }
    let session = Session {
        id: new_id("session"),
        datasource_id: req.datasource_id,
        history: Vec::new(),
    };
    state.persist_session(&session);
    lock(&state.sessions).insert(session.id.clone(), Arc::new(Mutex::new(session.clone())));
    Ok((StatusCode::CREATED, Json(session)))
}

fn session(state: &AppState, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
    lock(&state.sessions)
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
}

async fn get_session(State(state): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Session>, ApiError> {
    let s = session(&state, &id)?;
    let snapshot = lock(&s).clone();
    Ok(Json(snapshot))
}

#[derive(Deserialize)]
struct QuestionRequest {
    question: String,
}

async fn post_question(
    State(state): Shared,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<QuestionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let s = session(&state, &id)?;
    let req = body(payload)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::BadRequest("question must be non-empty".into()));
    }
    let datasource = lock(&s).datasource_id.clone();
    let job = state.ask(s, datasource, req.question)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job }))))
}

#[derive(Deserialize)]
struct FeedbackRequest {
    datasource_id: String,
    id: String,
    satisfied: bool,
}

async fn post_feedback(
    State(state): Shared,
    payload: Result<Json<FeedbackRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let req = body(payload)?;
    let ctx = state
        .context(&req.datasource_id)
        .ok_or_else(|| ApiError::NotFound(format!("no data context for {}", req.datasource_id)))?;
    let recorded = tokio::task::spawn_blocking(move || {
        ctx.pipeline.feedback(&req.id, req.satisfied)?;
        ctx.pipeline.index.flush().map_err(edakit_core::question::QuestionError::from)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    match recorded {
        Ok(()) => Ok(Json(json!({ "recorded": true }))),
        Err(edakit_core::question::QuestionError::UnknownArtifact(id)) => Err(ApiError::NotFound(format!("unknown artifact {id}"))),
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/datasources", post(post_datasource).get(list_datasources))
        .route("/datasources/{id}", get(get_datasource))
        .route("/datasources/{id}/suggestions", get(suggestions))
        .route("/jobs/{id}", get(get_job))
        .route("/sessions", post(post_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/questions", post(post_question))
        .route("/feedback", post(post_feedback))
        .layer(middleware::from_fn_with_state(state.clone(), require_key))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then lets accepted jobs finish.
pub async fn serve(listener: TcpListener, state: Arc<AppState>, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    state.drain().await;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_machine_only_moves_forward() {
        use JobState::*;
        let all = [Queued, Running, Done, Failed];
        for a in all {
            for b in all {
                let ok = a.can_become(b);
                assert_eq!(ok, matches!((a, b), (Queued, Running) | (Queued, Failed) | (Running, Done) | (Running, Failed)));
                if ok {
                    assert!(b > a);
                }
            }
        }
        assert!(Done.is_terminal() && Failed.is_terminal() && !Running.is_terminal());
    }
}
