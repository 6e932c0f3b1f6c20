//! Local JSON train/predict service. Training jobs run one at a time on a
//! worker; predictions on finished runs are served concurrently.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dpgen::genmodels::{DownstreamModel, Provenance};
use dpgen::nn::{Matrix, Network};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

use crate::config::ExperimentConfig;
use crate::pipeline::{run_experiment, RunReport};

/// Jobs accepted beyond the one in progress.
pub const QUEUE_CAPACITY: usize = 16;

pub const RAW_DATA_REJECTED: &str = "raw private data rejected";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub runs_dir: PathBuf,
    /// Refuse training payloads that are raw records rather than generated data.
    pub enforce_privacy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Completed,
    Failed,
}

enum Entry {
    Queued,
    Running,
    Done { report: Box<RunReport>, model: Arc<Network> },
    Failed(String),
}

struct Inner {
    cfg: ServiceConfig,
    runs: RwLock<HashMap<String, Entry>>,
    queue: mpsc::Sender<(String, ExperimentConfig)>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

#[derive(Debug, Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub status: RunStatus,
    #[serde(default)]
    pub report: Option<RunReport>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub run_id: String,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probabilities: Vec<Vec<f64>>,
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(json!({ "error": reason.into() }))).into_response()
}

/// Loads a finished run's report and the network that serves `/predict`.
fn load_finished(dir: &std::path::Path) -> dpgen::Result<(RunReport, Network)> {
    let report = RunReport::load(dir.join("report.json"))?;
    let model = DownstreamModel::load(dir.join("classifier.json"))?.classifier_on_features()?;
    Ok((report, model))
}

impl AppState {
    /// Reloads completed runs from `runs_dir` and starts the training worker.
    /// Must be called inside a Tokio runtime.
    pub fn start(cfg: ServiceConfig) -> std::io::Result<Self> {
        std::fs::create_dir_all(&cfg.runs_dir)?;
        let mut runs = HashMap::new();
        for entry in std::fs::read_dir(&cfg.runs_dir)? {
            let entry = entry?;
            if let Ok((report, model)) = load_finished(&entry.path()) {
                runs.insert(entry.file_name().to_string_lossy().into_owned(), Entry::Done { report: Box::new(report), model: Arc::new(model) });
            }
        }
        let (tx, mut rx) = mpsc::channel::<(String, ExperimentConfig)>(QUEUE_CAPACITY);
        let state = AppState(Arc::new(Inner { cfg, runs: RwLock::new(runs), queue: tx }));
        let worker = state.clone();
        tokio::spawn(async move {
            while let Some((id, cfg)) = rx.recv().await {
                worker.set(&id, Entry::Running);
                let dir = cfg.output_dir.clone();
                let result = tokio::task::spawn_blocking(move || run_experiment(&cfg).and_then(|_| load_finished(&dir))).await;
                let entry = match result {
                    Ok(Ok((report, model))) => Entry::Done { report: Box::new(report), model: Arc::new(model) },
                    Ok(Err(e)) => Entry::Failed(e.to_string()),
                    Err(e) => Entry::Failed(format!("training task panicked: {e}")),
                };
                worker.set(&id, entry);
            }
        });
        Ok(state)
    }

    fn set(&self, id: &str, entry: Entry) {
        self.0.runs.write().expect("run table poisoned").insert(id.to_string(), entry);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/train", post(train))
        .route("/runs/{id}", get(get_run))
        .route("/predict", post(predict))
        .with_state(state)
}

async fn train(State(state): State<AppState>, body: String) -> Response {
    let mut cfg: ExperimentConfig = match serde_json::from_str(&body) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    if state.0.cfg.enforce_privacy && cfg.generator.provenance() == Provenance::None {
        return error(StatusCode::BAD_REQUEST, RAW_DATA_REJECTED);
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    cfg.output_dir = state.0.cfg.runs_dir.join(&id);
    if let Err(e) = cfg.validate() {
        return (StatusCode::BAD_REQUEST, Json(json!({ "error": "invalid configuration", "details": e.0 }))).into_response();
    }
    state.set(&id, Entry::Queued);
    if state.0.queue.try_send((id.clone(), cfg)).is_err() {
        state.0.runs.write().expect("run table poisoned").remove(&id);
        return error(StatusCode::SERVICE_UNAVAILABLE, "training queue is full");
    }
    (StatusCode::ACCEPTED, Json(json!({ "run_id": id, "status": RunStatus::Queued }))).into_response()
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let runs = state.0.runs.read().expect("run table poisoned");
    let view = match runs.get(&id) {
        None => return error(StatusCode::NOT_FOUND, format!("unknown run {id}")),
        Some(Entry::Queued) => RunView { run_id: id, status: RunStatus::Queued, report: None, error: None },
        Some(Entry::Running) => RunView { run_id: id, status: RunStatus::Running, report: None, error: None },
        Some(Entry::Done { report, .. }) => RunView { run_id: id, status: RunStatus::Completed, report: Some((**report).clone()), error: None },
        Some(Entry::Failed(e)) => RunView { run_id: id, status: RunStatus::Failed, report: None, error: Some(e.clone()) },
    };
    Json(view).into_response()
}

async fn predict(State(state): State<AppState>, body: String) -> Response {
    let req: PredictRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let model = {
        let runs = state.0.runs.read().expect("run table poisoned");
        match runs.get(&req.run_id) {
            None => return error(StatusCode::NOT_FOUND, format!("unknown run {}", req.run_id)),
            Some(Entry::Done { model, .. }) => model.clone(),
            Some(Entry::Failed(e)) => return error(StatusCode::CONFLICT, format!("run failed: {e}")),
            Some(_) => return error(StatusCode::CONFLICT, "run has not finished training"),
        }
    };
    let dim = model.input_dim();
    if req.rows.is_empty() {
        return error(StatusCode::BAD_REQUEST, "no rows");
    }
    if let Some(bad) = req.rows.iter().position(|r| r.len() != dim) {
        return error(StatusCode::BAD_REQUEST, format!("row {bad} has {} values, model expects {dim}", req.rows[bad].len()));
    }
    if req.rows.iter().flatten().any(|v| !v.is_finite()) {
        return error(StatusCode::BAD_REQUEST, "rows contain non-finite values");
    }
    let x = Matrix::from_vec(req.rows.len(), dim, req.rows.concat()).expect("sized");
    match model.predict(&x) {
        Ok(p) => Json(PredictResponse { probabilities: p.iter_rows().map(<[f64]>::to_vec).collect() }).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: &str, cfg: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::start(cfg)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
