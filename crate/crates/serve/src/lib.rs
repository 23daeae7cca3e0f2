//! HTTP service: translation, DA survey delivery and post-edit collection.
//!
//! Annotations are persisted in an append-only JSONL store; reports are
//! recomputed from the store on every request. Raters authenticate with a
//! static bearer token from the config.

pub mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mtpipe_core::humaneval::{
    aggregate_da, pe_report, DAConfig, EvalError, DAReport, DAResponse, DAStringResult, EvalString, PEReport, SurveyBatch, Q1,
};
use mtpipe_core::metrics::hter;
use mtpipe_core::synth::{HttpBackend, MTBackendRef, TranslationBackend};
use mtpipe_core::trainpipe::{ToyModel, ToyTranslator};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::RwLock;

use store::{Payload, Store, StoreError};

pub const ENV_BIND: &str = "MTPIPE_BIND";
pub const ENV_STORE: &str = "MTPIPE_STORE";
/// Seconds a client should wait after a 502 from /api/translate.
pub const RETRY_AFTER_SECS: u64 = 5;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionConfig {
    pub src: String,
    pub tgt: String,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Dictionary model written by `mtpipe train --backend toy`.
    Toy { id: String, model: PathBuf },
    Http(MTBackendRef),
}

impl BackendConfig {
    pub fn id(&self) -> &str {
        match self {
            BackendConfig::Toy { id, .. } => id,
            BackendConfig::Http(r) => &r.id,
        }
    }
}

/// A post-editing task: MT output to be corrected segment by segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PETask {
    pub id: String,
    pub segments: Vec<PESegment>,
    /// Raters allowed to submit; empty means any authenticated rater.
    #[serde(default)]
    pub raters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PESegment {
    pub source: String,
    pub mt: String,
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    pub store_dir: PathBuf,
    #[serde(default)]
    pub directions: Vec<DirectionConfig>,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    /// Bearer token -> rater id.
    #[serde(default)]
    pub raters: BTreeMap<String, String>,
    /// Survey batch JSON files written by `mtpipe da-build`.
    #[serde(default)]
    pub survey_batches: Vec<PathBuf>,
    /// PE task JSON files.
    #[serde(default)]
    pub pe_tasks: Vec<PathBuf>,
    #[serde(default)]
    pub da: DAConfig,
}

impl ServeConfig {
    /// Read a TOML config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, ServeError> {
        let err = |message: String| ServeError::Config {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut cfg: ServeConfig = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.store_dir);
        cfg.survey_batches.iter_mut().for_each(rebase);
        cfg.pe_tasks.iter_mut().for_each(rebase);
        for b in &mut cfg.backends {
            if let BackendConfig::Toy { model, .. } = b {
                rebase(model);
            }
        }
        Ok(cfg)
    }

    /// Apply `MTPIPE_BIND` and `MTPIPE_STORE` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(bind) = std::env::var(ENV_BIND) {
            self.bind = bind;
        }
        if let Ok(store) = std::env::var(ENV_STORE) {
            self.store_dir = PathBuf::from(store);
        }
        self
    }
}

pub struct AppState {
    directions: BTreeMap<(String, String), Arc<dyn TranslationBackend>>,
    raters: BTreeMap<String, String>,
    batches: BTreeMap<String, SurveyBatch>,
    /// survey id -> batch id
    survey_index: BTreeMap<String, String>,
    tasks: BTreeMap<String, PETask>,
    da_config: DAConfig,
    store: RwLock<Store>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ServeError> {
    let err = |message: String| ServeError::Config {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

impl AppState {
    /// Build state from a config, loading backends, batches and tasks.
    pub fn from_config(cfg: &ServeConfig) -> Result<Self, ServeError> {
        let mut backends: BTreeMap<String, Arc<dyn TranslationBackend>> = BTreeMap::new();
        for b in &cfg.backends {
            let backend: Arc<dyn TranslationBackend> = match b {
                BackendConfig::Toy { id, model } => Arc::new(ToyTranslator {
                    id: id.clone(),
                    model: ToyModel::load(model).map_err(ServeError::Invalid)?,
                }),
                BackendConfig::Http(r) => {
                    Arc::new(HttpBackend::new(r).map_err(|e| ServeError::Invalid(e.to_string()))?)
                }
            };
            if backends.insert(b.id().to_string(), backend).is_some() {
                return Err(ServeError::Invalid(format!("backend id `{}` defined twice", b.id())));
            }
        }
        let batches = cfg
            .survey_batches
            .iter()
            .map(|p| read_json(p))
            .collect::<Result<Vec<SurveyBatch>, _>>()?;
        let tasks = cfg
            .pe_tasks
            .iter()
            .map(|p| read_json(p))
            .collect::<Result<Vec<PETask>, _>>()?;
        let mut directions = BTreeMap::new();
        for d in &cfg.directions {
            let backend = backends
                .get(&d.backend)
                .ok_or_else(|| ServeError::Invalid(format!("direction {}-{} names unknown backend `{}`", d.src, d.tgt, d.backend)))?;
            directions.insert((d.src.clone(), d.tgt.clone()), backend.clone());
        }
        Self::new(directions, cfg.raters.clone(), batches, tasks, cfg.da, &cfg.store_dir)
    }

    pub fn new(
        directions: BTreeMap<(String, String), Arc<dyn TranslationBackend>>,
        raters: BTreeMap<String, String>,
        batches: Vec<SurveyBatch>,
        tasks: Vec<PETask>,
        da_config: DAConfig,
        store_dir: &Path,
    ) -> Result<Self, ServeError> {
        let mut survey_index = BTreeMap::new();
        let mut batch_map = BTreeMap::new();
        for b in batches {
            for s in &b.surveys {
                if survey_index.insert(s.id.clone(), b.batch_id.clone()).is_some() {
                    return Err(ServeError::Invalid(format!("survey id `{}` occurs in more than one batch", s.id)));
                }
            }
            if batch_map.contains_key(&b.batch_id) {
                return Err(ServeError::Invalid(format!("batch `{}` loaded twice", b.batch_id)));
            }
            batch_map.insert(b.batch_id.clone(), b);
        }
        let mut task_map = BTreeMap::new();
        for t in tasks {
            if task_map.insert(t.id.clone(), t).is_some() {
                return Err(ServeError::Invalid("duplicate PE task id".into()));
            }
        }
        Ok(AppState {
            directions,
            raters,
            batches: batch_map,
            survey_index,
            tasks: task_map,
            da_config,
            store: RwLock::new(Store::open(store_dir)?),
        })
    }

    /// DA strings and report of one batch, recomputed from the store.
    pub async fn da_report(&self, batch_id: &str) -> Result<DABatchReport, ApiError> {
        let batch = self
            .batches
            .get(batch_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown survey batch `{batch_id}`")))?;
        let responses = self.store.read().await.da_responses(batch_id);
        batch_report(batch, &responses, self.da_config)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    }

    pub async fn pe_task_report(&self, task_id: &str) -> Result<PETaskReport, ApiError> {
        let task = self.task(task_id)?;
        let edits = self.store.read().await.post_edits(task_id);
        if edits.is_empty() {
            return Err(ApiError::not_found(format!("task `{task_id}` has no post-edits yet")));
        }
        task_report(task, &edits).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    }

    fn task(&self, id: &str) -> Result<&PETask, ApiError> {
        self.tasks
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown PE task `{id}`")))
    }

    fn rater(&self, headers: &HeaderMap) -> Result<String, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))?;
        self.raters
            .get(token.trim())
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown rater token"))
    }
}

fn submitted(task: &PETask, edits: &BTreeMap<usize, String>) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut raw = Vec::with_capacity(edits.len());
    let mut pe = Vec::with_capacity(edits.len());
    let mut src = Vec::with_capacity(edits.len());
    for (&i, text) in edits {
        raw.push(task.segments[i].mt.clone());
        pe.push(text.clone());
        src.push(task.segments[i].source.clone());
    }
    (raw, pe, src)
}

/// Report of one survey batch over the given responses.
pub fn batch_report(batch: &SurveyBatch, responses: &[DAResponse], config: DAConfig) -> Result<DABatchReport, EvalError> {
    let (strings, report) = aggregate_da(responses, &batch.strings, config)?;
    Ok(DABatchReport {
        batch_id: batch.batch_id.clone(),
        n_responses: responses.len(),
        strings,
        report,
    })
}

/// Report of a PE task over its submitted segments, by segment index.
pub fn task_report(task: &PETask, edits: &BTreeMap<usize, String>) -> Result<PETaskReport, EvalError> {
    let (raw, pe, src) = submitted(task, edits);
    Ok(PETaskReport {
        task_id: task.id.clone(),
        n_segments: task.segments.len(),
        submitted: edits.keys().copied().collect(),
        complete: edits.len() == task.segments.len(),
        report: pe_report(&raw, &pe, &src)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DABatchReport {
    pub batch_id: String,
    pub n_responses: usize,
    pub strings: Vec<DAStringResult>,
    pub report: DAReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PETaskReport {
    pub task_id: String,
    pub n_segments: usize,
    pub submitted: Vec<usize>,
    pub complete: bool,
    pub report: PEReport,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    retry_after: Option<u64>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            retry_after: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Duplicate { .. } => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(serde_json::json!({ "error": self.message }))).into_response();
        if let Some(secs) = self.retry_after {
            resp.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from_str(&secs.to_string()).expect("ascii digits"));
        }
        resp
    }
}

#[derive(Debug, Deserialize)]
pub struct TranslateRequest {
    pub text: String,
    pub src: String,
    pub tgt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub translation: String,
    pub backend_id: String,
}

async fn translate(State(state): State<Arc<AppState>>, Json(req): Json<TranslateRequest>) -> Result<Json<TranslateResponse>, ApiError> {
    let backend = state
        .directions
        .get(&(req.src.clone(), req.tgt.clone()))
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unsupported direction {}-{}", req.src, req.tgt)))?;
    let backend_id = backend.id().to_string();
    if req.text.trim().is_empty() {
        return Ok(Json(TranslateResponse {
            translation: String::new(),
            backend_id,
        }));
    }
    let started = Instant::now();
    let result = tokio::task::spawn_blocking(move || backend.translate_batch(&[req.text], &req.src, &req.tgt)).await;
    log::info!("translate via {backend_id}: {} ms", started.elapsed().as_millis());
    let failure = |message: String| ApiError {
        status: StatusCode::BAD_GATEWAY,
        message,
        retry_after: Some(RETRY_AFTER_SECS),
    };
    match result {
        Ok(Ok(mut out)) if out.len() == 1 => match out.pop().flatten() {
            Some(translation) => Ok(Json(TranslateResponse { translation, backend_id })),
            None => Err(failure(format!("backend `{backend_id}` returned no translation"))),
        },
        Ok(Ok(_)) => Err(failure(format!("backend `{backend_id}` returned a malformed batch"))),
        Ok(Err(e)) => Err(failure(format!("backend `{backend_id}` failed: {e}"))),
        Err(e) => Err(failure(format!("backend `{backend_id}` panicked: {e}"))),
    }
}

#[derive(Debug, Serialize)]
struct DirectionInfo {
    src: String,
    tgt: String,
    backend_id: String,
}

async fn directions(State(state): State<Arc<AppState>>) -> Json<Vec<DirectionInfo>> {
    Json(
        state
            .directions
            .iter()
            .map(|((src, tgt), b)| DirectionInfo {
                src: src.clone(),
                tgt: tgt.clone(),
                backend_id: b.id().to_string(),
            })
            .collect(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SurveyItem {
    pub string_id: String,
    pub source: String,
    pub mt_output: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SurveyView {
    pub id: String,
    pub batch_id: String,
    pub items: Vec<SurveyItem>,
}

async fn get_survey(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SurveyView>, ApiError> {
    let (batch, survey) = find_survey(&state, &id)?;
    let items = survey
        .string_ids
        .iter()
        .filter_map(|sid| batch.string(sid))
        .map(|s: &EvalString| SurveyItem {
            string_id: s.id.clone(),
            source: s.source.clone(),
            mt_output: s.mt_output.clone(),
        })
        .collect();
    Ok(Json(SurveyView {
        id: survey.id.clone(),
        batch_id: batch.batch_id.clone(),
        items,
    }))
}

fn find_survey<'a>(state: &'a AppState, id: &str) -> Result<(&'a SurveyBatch, &'a mtpipe_core::humaneval::Survey), ApiError> {
    let batch = state
        .survey_index
        .get(id)
        .and_then(|b| state.batches.get(b))
        .ok_or_else(|| ApiError::not_found(format!("unknown survey `{id}`")))?;
    let survey = batch.survey(id).expect("indexed survey exists");
    Ok((batch, survey))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DASubmission {
    pub string_id: String,
    pub q1: Q1,
    pub q2: u8,
    #[serde(default)]
    pub q3: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub accepted: bool,
    pub sequence: u64,
}

async fn post_response(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(sub): Json<DASubmission>,
) -> Result<Json<Accepted>, ApiError> {
    let rater = state.rater(&headers)?;
    let (batch, survey) = find_survey(&state, &id)?;
    if !survey.raters.contains(&rater) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, format!("rater `{rater}` is not assigned to survey `{id}`")));
    }
    if !survey.string_ids.contains(&sub.string_id) {
        return Err(ApiError::unprocessable(format!("string `{}` is not part of survey `{id}`", sub.string_id)));
    }
    let response = DAResponse {
        string_id: sub.string_id,
        rater_id: rater.clone(),
        q1: sub.q1,
        q2: sub.q2,
        q3: sub.q3.filter(|t| !t.trim().is_empty()),
    };
    response.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let sequence = state.store.write().await.append(
        &rater,
        Payload::DaResponse {
            batch_id: batch.batch_id.clone(),
            survey_id: id,
            response,
        },
    )?;
    Ok(Json(Accepted { accepted: true, sequence }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskSegmentView {
    pub index: usize,
    pub source: String,
    pub mt: String,
    pub post_edited: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskView {
    pub id: String,
    pub segments: Vec<TaskSegmentView>,
}

async fn get_task(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<TaskView>, ApiError> {
    let task = state.task(&id)?;
    let edits = state.store.read().await.post_edits(&id);
    Ok(Json(TaskView {
        id: task.id.clone(),
        segments: task
            .segments
            .iter()
            .enumerate()
            .map(|(index, s)| TaskSegmentView {
                index,
                source: s.source.clone(),
                mt: s.mt.clone(),
                post_edited: edits.get(&index).cloned(),
            })
            .collect(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PostEdit {
    pub post_edited: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PostEditAccepted {
    pub sequence: u64,
    pub hter_so_far: f64,
    pub n_submitted: usize,
}

async fn post_segment(
    State(state): State<Arc<AppState>>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    headers: HeaderMap,
    Json(body): Json<PostEdit>,
) -> Result<Json<PostEditAccepted>, ApiError> {
    let rater = state.rater(&headers)?;
    let task = state.task(&id)?;
    if n >= task.segments.len() {
        return Err(ApiError::not_found(format!("task `{id}` has no segment {n}")));
    }
    if !task.raters.is_empty() && !task.raters.contains(&rater) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, format!("rater `{rater}` is not assigned to task `{id}`")));
    }
    if body.post_edited.trim().is_empty() {
        return Err(ApiError::unprocessable("post-edit is empty"));
    }
    let mut store = state.store.write().await;
    let sequence = store.append(
        &rater,
        Payload::PeSegment {
            task_id: id.clone(),
            segment_index: n,
            post_edited_text: body.post_edited,
        },
    )?;
    let edits = store.post_edits(&id);
    drop(store);
    let (raw, pe, _) = submitted(task, &edits);
    let score = hter(&raw, &pe).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(PostEditAccepted {
        sequence,
        hter_so_far: score.score,
        n_submitted: edits.len(),
    }))
}

async fn da_report(State(state): State<Arc<AppState>>, UrlPath(batch): UrlPath<String>) -> Result<Json<DABatchReport>, ApiError> {
    state.da_report(&batch).await.map(Json)
}

async fn pe_task_report(State(state): State<Arc<AppState>>, UrlPath(task): UrlPath<String>) -> Result<Json<PETaskReport>, ApiError> {
    state.pe_task_report(&task).await.map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/translate", post(translate))
        .route("/api/directions", get(directions))
        .route("/api/surveys/:id", get(get_survey))
        .route("/api/surveys/:id/responses", post(post_response))
        .route("/api/pe/tasks/:id", get(get_task))
        .route("/api/pe/tasks/:id/segments/:n", post(post_segment))
        .route("/api/reports/da/:batch", get(da_report))
        .route("/api/reports/pe/:task", get(pe_task_report))
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn run(cfg: ServeConfig) -> Result<(), ServeError> {
    let state = Arc::new(AppState::from_config(&cfg)?);
    let addr: SocketAddr = cfg.bind.parse().map_err(|e: std::net::AddrParseError| ServeError::Bind {
        addr: cfg.bind.clone(),
        message: e.to_string(),
    })?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServeError::Bind {
        addr: cfg.bind.clone(),
        message: e.to_string(),
    })?;
    log::info!("listening on {addr}, store {}", cfg.store_dir.display());
    axum::serve(listener, router(state)).await.map_err(|e| ServeError::Bind {
        addr: cfg.bind,
        message: e.to_string(),
    })
}
