//! HTTP job service for the interactive loop.
//!
//! Audio is submitted as a job and processed on a bounded worker pool. Once a
//! job is done, decoder knobs can be changed with `redecode`, which reuses the
//! pipeline's cached acoustics and only reruns word decoding.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::audio::{decode_wav, AudioBuffer};
use crate::pipeline::{LyricResult, Pipeline, PipelineConfig, PipelineError, Stage, MIN_AUDIO_SECONDS};

pub const MAX_UPLOAD_BYTES: usize = 50 * 1024 * 1024;
pub const DEFAULT_MAX_JOBS: usize = 100;

/// Config keys a client may not set: they name files on the server.
const PATH_KEYS: &[&str] = &["data_dir", "am", "lexicon", "lm", "channel"];

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub max_jobs: usize,
    pub workers: usize,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_jobs: DEFAULT_MAX_JOBS,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            max_upload_bytes: MAX_UPLOAD_BYTES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Separating,
    Recognizing,
    Decoding,
    Done,
    Failed,
}

/// Decoder knobs accepted by `POST /jobs/{id}/redecode`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedecodeRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_sub: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_del: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ins: Option<f64>,
}

impl RedecodeRequest {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.lm_weight {
            cfg.decoder.lm_weight = v;
        }
        if let Some(v) = self.beam_width {
            cfg.decoder.beam_width = v;
        }
        if let Some(v) = self.word_penalty {
            cfg.decoder.word_insertion_penalty = v;
        }
        if self.p_sub.is_some() {
            cfg.channel.p_sub = self.p_sub;
        }
        if self.p_del.is_some() {
            cfg.channel.p_del = self.p_del;
        }
        if self.p_ins.is_some() {
            cfg.channel.p_ins = self.p_ins;
        }
    }
}

/// One redecode: the knobs used and the resulting top line per segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub overrides: RedecodeRequest,
    pub top: Vec<String>,
}

/// Snapshot returned by the job endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub state: JobState,
    pub config: std::collections::BTreeMap<String, String>,
    /// Present only when `state` is `done`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<LyricResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub history: Vec<HistoryEntry>,
}

struct JobData {
    state: JobState,
    config: PipelineConfig,
    audio_sha256: Option<String>,
    result: Option<LyricResult>,
    error: Option<String>,
    created_ms: u64,
    updated_ms: u64,
    history: Vec<HistoryEntry>,
}

struct Job {
    id: String,
    data: Mutex<JobData>,
    /// Serializes redecodes of this job.
    writer: tokio::sync::Mutex<()>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Job {
    fn view(&self) -> JobView {
        let d = self.data.lock().expect("job lock");
        JobView {
            id: self.id.clone(),
            state: d.state,
            config: d.config.echo(),
            result: if d.state == JobState::Done { d.result.clone() } else { None },
            error: d.error.clone(),
            created_ms: d.created_ms,
            updated_ms: d.updated_ms,
            history: d.history.clone(),
        }
    }

    fn set_state(&self, state: JobState) {
        let mut d = self.data.lock().expect("job lock");
        d.state = state;
        d.updated_ms = now_ms();
    }
}

/// Jobs by id with least-recently-used eviction.
struct JobStore {
    capacity: usize,
    jobs: HashMap<String, Arc<Job>>,
    order: VecDeque<String>,
}

impl JobStore {
    fn get(&mut self, id: &str) -> Option<Arc<Job>> {
        let job = self.jobs.get(id).cloned()?;
        if let Some(pos) = self.order.iter().position(|k| k == id) {
            let k = self.order.remove(pos).expect("valid position");
            self.order.push_back(k);
        }
        Some(job)
    }

    fn insert(&mut self, job: Arc<Job>) {
        self.order.push_back(job.id.clone());
        self.jobs.insert(job.id.clone(), job);
        while self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.jobs.remove(&old);
            }
        }
    }
}

struct AppState {
    pipeline: Arc<Pipeline>,
    defaults: PipelineConfig,
    jobs: Mutex<JobStore>,
    workers: Arc<Semaphore>,
    counter: AtomicU64,
    id_salt: u64,
}

impl AppState {
    fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.lock().expect("job store lock").get(id)
    }

    fn next_id(&self) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("{:016x}{:08x}", self.id_salt, n)
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, message.into())
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no job {id}"))
}

/// Builds the router. `defaults` supplies every setting a submission leaves out.
pub fn router(pipeline: Arc<Pipeline>, defaults: PipelineConfig, cfg: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        pipeline,
        defaults,
        jobs: Mutex::new(JobStore { capacity: cfg.max_jobs.max(1), jobs: HashMap::new(), order: VecDeque::new() }),
        workers: Arc::new(Semaphore::new(cfg.workers.max(1))),
        counter: AtomicU64::new(0),
        id_salt: rand::random(),
    });
    Router::new()
        .route("/", get(index))
        .route("/healthz", get(|| async { "ok" }))
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/redecode", post(redecode_job))
        // leave room for multipart framing around a maximum-size upload
        .layer(DefaultBodyLimit::max(cfg.max_upload_bytes + 64 * 1024))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

const INDEX_HTML: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>imly</title></head>
<body>
<h1>imly</h1>
<p>Job API: <code>POST /jobs</code>, <code>GET /jobs/{id}</code>,
<code>POST /jobs/{id}/redecode</code>, <code>GET /healthz</code>.</p>
</body></html>
";

fn json_value_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        serde_json::Value::Null => Some("none".into()),
        _ => None,
    }
}

fn config_from_json(defaults: &PipelineConfig, text: &str) -> Result<PipelineConfig, ApiError> {
    let mut cfg = defaults.clone();
    if text.trim().is_empty() {
        return Ok(cfg);
    }
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad_request(format!("config is not JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| bad_request("config must be a JSON object"))?;
    for (key, v) in obj {
        if PATH_KEYS.contains(&key.as_str()) {
            return Err(bad_request(format!("config key {key:?} cannot be set by clients")));
        }
        let s = json_value_to_string(v).ok_or_else(|| bad_request(format!("config key {key:?} must be a scalar")))?;
        cfg.set(key, &s).map_err(|e| bad_request(e.to_string()))?;
    }
    cfg.validate().map_err(|e| bad_request(e.to_string()))?;
    Ok(cfg)
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError(e.status(), e.body_text())
}

async fn create_job(State(app): State<Arc<AppState>>, mut form: Multipart) -> Result<Response, ApiError> {
    let mut audio: Option<Vec<u8>> = None;
    let mut config_text = String::new();
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        match field.name() {
            Some("audio") => audio = Some(field.bytes().await.map_err(multipart_error)?.to_vec()),
            Some("config") => config_text = field.text().await.map_err(multipart_error)?,
            _ => {}
        }
    }
    let bytes = audio.ok_or_else(|| bad_request("missing multipart field \"audio\""))?;
    if bytes.len() > MAX_UPLOAD_BYTES {
        return Err(ApiError(StatusCode::PAYLOAD_TOO_LARGE, "audio exceeds 50 MB".into()));
    }
    let config = config_from_json(&app.defaults, &config_text)?;
    let buf = decode_wav(&bytes).map_err(|e| bad_request(format!("invalid WAV: {e}")))?;
    if buf.duration_seconds() < MIN_AUDIO_SECONDS {
        return Err(bad_request(format!("audio is {:.3} s long; at least {MIN_AUDIO_SECONDS} s required", buf.duration_seconds())));
    }

    let now = now_ms();
    let job = Arc::new(Job {
        id: app.next_id(),
        data: Mutex::new(JobData {
            state: JobState::Queued,
            config,
            audio_sha256: None,
            result: None,
            error: None,
            created_ms: now,
            updated_ms: now,
            history: Vec::new(),
        }),
        writer: tokio::sync::Mutex::new(()),
    });
    app.jobs.lock().expect("job store lock").insert(job.clone());
    let id = job.id.clone();
    tokio::spawn(run_job(app.clone(), job, buf));
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "id": id }))).into_response())
}

async fn run_job(app: Arc<AppState>, job: Arc<Job>, buf: AudioBuffer) {
    // Semaphore waiters are served in FIFO order.
    let Ok(_permit) = app.workers.clone().acquire_owned().await else { return };
    let pipeline = app.pipeline.clone();
    let worker_job = job.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let cfg = worker_job.data.lock().expect("job lock").config.clone();
        pipeline.imagine_with_progress(&buf, &cfg, |stage| {
            worker_job.set_state(match stage {
                Stage::Separating => JobState::Separating,
                Stage::Recognizing => JobState::Recognizing,
                Stage::Decoding => JobState::Decoding,
            })
        })
    })
    .await;
    let mut d = job.data.lock().expect("job lock");
    match outcome {
        Ok(Ok(result)) => {
            d.audio_sha256 = Some(result.audio_sha256.clone());
            d.result = Some(result);
            d.state = JobState::Done;
        }
        Ok(Err(e)) => {
            d.error = Some(e.to_string());
            d.state = JobState::Failed;
        }
        Err(e) => {
            d.error = Some(format!("internal error: {e}"));
            d.state = JobState::Failed;
        }
    }
    d.updated_ms = now_ms();
}

async fn get_job(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    app.job(&id).map(|j| Json(j.view())).ok_or_else(|| not_found(&id))
}

async fn redecode_job(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<RedecodeRequest>>,
) -> Result<Json<JobView>, ApiError> {
    let job = app.job(&id).ok_or_else(|| not_found(&id))?;
    let overrides = body.map(|Json(b)| b).unwrap_or_default();
    let _writer = job.writer.lock().await;

    let (cfg, audio_sha256) = {
        let mut d = job.data.lock().expect("job lock");
        if d.state != JobState::Done {
            return Err(ApiError(StatusCode::CONFLICT, format!("job {id} is {:?}, not done", d.state).to_lowercase()));
        }
        let mut cfg = d.config.clone();
        overrides.apply(&mut cfg);
        cfg.validate().map_err(|e| bad_request(e.to_string()))?;
        let sha = d.audio_sha256.clone().expect("done jobs record their audio hash");
        d.state = JobState::Decoding;
        d.updated_ms = now_ms();
        (cfg, sha)
    };

    let pipeline = app.pipeline.clone();
    let run_cfg = cfg.clone();
    let outcome = tokio::task::spawn_blocking(move || pipeline.redecode(&audio_sha256, &run_cfg)).await;

    let mut d = job.data.lock().expect("job lock");
    d.state = JobState::Done;
    d.updated_ms = now_ms();
    match outcome {
        Ok(Ok(result)) => {
            d.history.push(HistoryEntry { overrides, top: result.top_lines() });
            d.result = Some(result);
            d.config = cfg;
        }
        Ok(Err(e @ PipelineError::CacheMiss { .. })) => {
            return Err(ApiError(StatusCode::CONFLICT, format!("{e}; resubmit the audio")));
        }
        Ok(Err(e)) => return Err(bad_request(e.to_string())),
        Err(e) => return Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
    drop(d);
    Ok(Json(job.view()))
}
