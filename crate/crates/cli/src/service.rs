//! HTTP service: episode submission and inspection over the same engine
//! the CLI uses, producing byte-identical trajectories for identical
//! inputs and seed.
//!
//! Endpoints:
//! - `POST /v1/episodes` — submit an episode request; with the mock
//!   provider the episode runs synchronously and the result returns in the
//!   response (502 on a failed episode); with an HTTP provider the request
//!   is accepted with `202` and runs in the background.
//! - `GET /v1/episodes/{id}` — the stored trajectory JSON, byte-identical
//!   to the CLI's trajectory line.
//! - `GET /v1/health` — build info and index checksums; never blocked by
//!   episode execution.
//! - `GET /v1/catalog` — the meta-path catalog.
//!
//! Episodes run inside `spawn_blocking` under a semaphore sized by
//! `config.concurrency`; the shared engine is immutable, so concurrent
//! episodes cannot contaminate each other's state.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as AxumPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use ghar_core::config::{ProviderMode, RuntimeOverrides};
use ghar_core::engine::Engine;
use ghar_core::rewards::RewardBreakdown;
use ghar_core::tasks::{
    cohort_by_id, label_los, label_read, CohortEntry, Label, PatientRecord, TaskKind, TaskSpec,
};
use ghar_core::trajectory::{EpisodeStatus, Trajectory};

use crate::CliError;

pub struct ServiceState {
    engine: Engine,
    cohort: HashMap<String, CohortEntry>,
    episodes: RwLock<HashMap<String, StoredEpisode>>,
    limiter: Arc<tokio::sync::Semaphore>,
    trajectory_sink: Option<Mutex<std::fs::File>>,
    health: serde_json::Value,
    catalog_json: serde_json::Value,
}

#[derive(Clone)]
enum StoredEpisode {
    Pending,
    Done { line: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRequest {
    pub task: String,
    #[serde(default)]
    pub patient_id: Option<String>,
    #[serde(default)]
    pub patient: Option<PatientRecord>,
    /// Ground-truth decompensation flags for an inline patient.
    #[serde(default)]
    pub dec_flags: Option<Vec<bool>>,
    /// Gold label value for an inline patient.
    #[serde(default)]
    pub gold: Option<String>,
    #[serde(default)]
    pub overrides: Option<RuntimeOverrides>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub status: String,
    pub final_prediction: Option<Label>,
    pub reward: Option<RewardBreakdown>,
    pub steps: usize,
    pub error: Option<String>,
}

impl EpisodeResult {
    fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            episode_id: t.episode_id.clone(),
            status: match t.status {
                EpisodeStatus::Complete => "complete".into(),
                EpisodeStatus::Failed => "failed".into(),
            },
            final_prediction: t.final_prediction.clone(),
            reward: t.steps.last().map(|s| s.reward.clone()),
            steps: t.steps.len(),
            error: t.error.clone(),
        }
    }
}

/// Build the shared state: load the cohort named in the config (if any)
/// and pre-compute everything `/v1/health` serves.
pub fn build_state(engine: Engine) -> Result<Arc<ServiceState>, CliError> {
    let cohort = match engine.config.paths.cohort.as_ref() {
        Some(path) => {
            let entries = ghar_core::tasks::read_cohort(path)?;
            cohort_by_id(&entries)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect()
        }
        None => HashMap::new(),
    };
    let trajectory_sink = match engine.config.paths.trajectories.as_ref() {
        Some(path) => Some(Mutex::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?,
        )),
        None => None,
    };
    let checksums: Vec<serde_json::Value> = engine
        .index_checksums()
        .into_iter()
        .map(|(i, sum)| json!({"meta_path": i, "sha256": sum}))
        .collect();
    let health = json!({
        "status": "ok",
        "service": "ghar",
        "version": env!("CARGO_PKG_VERSION"),
        "catalog_size": engine.catalog.count(),
        "indexed_partitions": engine.indexes.len(),
        "index_checksums": checksums,
    });
    let catalog_json = serde_json::to_value(&engine.catalog.paths).expect("catalog serializes");
    let limiter = Arc::new(tokio::sync::Semaphore::new(engine.config.concurrency));
    Ok(Arc::new(ServiceState {
        engine,
        cohort,
        episodes: RwLock::new(HashMap::new()),
        limiter,
        trajectory_sink,
        health,
        catalog_json,
    }))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/episodes", post(post_episode))
        .route("/v1/episodes/{id}", get(get_episode))
        .route("/v1/health", get(health))
        .route("/v1/catalog", get(catalog))
        .with_state(state)
}

fn bad_request(message: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({"error": {"kind": "bad_request", "message": message}})),
    )
        .into_response()
}

/// Validated episode work order.
struct ResolvedRequest {
    kind: TaskKind,
    patient: PatientRecord,
    gold: Label,
    overrides: Option<RuntimeOverrides>,
}

fn resolve_request(
    state: &ServiceState,
    request: EpisodeRequest,
) -> Result<ResolvedRequest, String> {
    let kind: TaskKind = request
        .task
        .parse()
        .map_err(|e| format!("field 'task': {e}"))?;
    let kappa = state.engine.config.tasks.kappa_days;

    let (patient, gold) = match (&request.patient_id, request.patient) {
        (Some(_), Some(_)) => {
            return Err("fields 'patient_id' and 'patient' are mutually exclusive".into())
        }
        (None, None) => return Err("one of 'patient_id' or 'patient' is required".into()),
        (Some(id), None) => {
            let entry = state
                .cohort
                .get(id)
                .ok_or_else(|| format!("field 'patient_id': unknown patient '{id}'"))?;
            let gold = state
                .engine
                .gold_for(kind, entry)
                .map_err(|e| format!("field 'patient_id': {e}"))?;
            (entry.patient.clone(), gold)
        }
        (None, Some(patient)) => {
            if patient.visits.is_empty() {
                return Err("field 'patient.visits': must not be empty".into());
            }
            let task = TaskSpec::for_kind(kind, kappa);
            let gold = match &request.gold {
                Some(value) => task
                    .label_by_value(value)
                    .ok_or_else(|| format!("field 'gold': '{value}' not in label space"))?,
                None => match kind {
                    TaskKind::Read => {
                        if patient.visits.len() < 2 {
                            return Err(
                                "field 'patient.visits': readmission needs two visits".into()
                            );
                        }
                        label_read(&patient, patient.visits.len() - 2, kappa)
                            .map_err(|e| format!("field 'patient': {e}"))?
                    }
                    TaskKind::Los => label_los(patient.visits.last().expect("nonempty"))
                        .map_err(|e| format!("field 'patient': {e}"))?,
                    TaskKind::Dec => {
                        let flags = request.dec_flags.as_ref().ok_or_else(|| {
                            "field 'gold' or 'dec_flags': required for task 'dec'".to_string()
                        })?;
                        if flags.len() != patient.visits.len() {
                            return Err(
                                "field 'dec_flags': length must match patient.visits".into()
                            );
                        }
                        ghar_core::tasks::label_dec(*flags.last().expect("nonempty"))
                    }
                },
            };
            (patient, gold)
        }
    };
    Ok(ResolvedRequest {
        kind,
        patient,
        gold,
        overrides: request.overrides,
    })
}

async fn run_and_store(state: Arc<ServiceState>, resolved: ResolvedRequest) -> EpisodeResult {
    let permit = state
        .limiter
        .clone()
        .acquire_owned()
        .await
        .expect("semaphore never closed");
    let state_for_run = state.clone();
    let trajectory = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        state_for_run.engine.run_for_patient(
            resolved.kind,
            &resolved.patient,
            resolved.gold,
            resolved.overrides.as_ref(),
        )
    })
    .await
    .expect("episode task does not panic");

    let result = EpisodeResult::from_trajectory(&trajectory);
    let line = trajectory.to_line();
    if let Some(sink) = &state.trajectory_sink {
        use std::io::Write;
        let mut file = sink.lock().expect("sink lock");
        let _ = file
            .write_all(line.as_bytes())
            .and_then(|_| file.write_all(b"\n"));
    }
    state
        .episodes
        .write()
        .expect("episode store lock")
        .insert(result.episode_id.clone(), StoredEpisode::Done { line });
    result
}

async fn post_episode(
    State(state): State<Arc<ServiceState>>,
    body: Result<Json<EpisodeRequest>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(request) = match body {
        Ok(b) => b,
        Err(rejection) => return bad_request(rejection.body_text()),
    };
    let resolved = match resolve_request(&state, request) {
        Ok(r) => r,
        Err(message) => return bad_request(message),
    };

    match state.engine.config.provider.mode {
        ProviderMode::Mock => {
            let result = run_and_store(state.clone(), resolved).await;
            let status = if result.status == "failed" {
                StatusCode::BAD_GATEWAY
            } else {
                StatusCode::OK
            };
            (status, Json(result)).into_response()
        }
        ProviderMode::Http => {
            // Reserve the id up front so the client can poll.
            let mut snapshot = state.engine.config.snapshot();
            if let Some(ov) = &resolved.overrides {
                ov.apply(&mut snapshot);
            }
            let id = ghar_core::trajectory::episode_id(
                snapshot.seed,
                resolved.kind,
                &resolved.patient.patient_id,
                &snapshot,
            );
            state
                .episodes
                .write()
                .expect("episode store lock")
                .insert(id.clone(), StoredEpisode::Pending);
            let state_bg = state.clone();
            tokio::spawn(async move {
                run_and_store(state_bg, resolved).await;
            });
            (
                StatusCode::ACCEPTED,
                Json(json!({"episode_id": id, "status": "pending"})),
            )
                .into_response()
        }
    }
}

async fn get_episode(
    State(state): State<Arc<ServiceState>>,
    AxumPath(id): AxumPath<String>,
) -> Response {
    let stored = state
        .episodes
        .read()
        .expect("episode store lock")
        .get(&id)
        .cloned();
    match stored {
        Some(StoredEpisode::Done { line, .. }) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "application/json")],
            line,
        )
            .into_response(),
        Some(StoredEpisode::Pending) => (
            StatusCode::ACCEPTED,
            Json(json!({"episode_id": id, "status": "pending"})),
        )
            .into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({"error": {"kind": "not_found", "message": format!("no episode '{id}'")}})),
        )
            .into_response(),
    }
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(state.health.clone())
}

async fn catalog(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(state.catalog_json.clone())
}

/// Run the service until ctrl-c.
pub async fn serve(state: Arc<ServiceState>, addr: &str) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::User(format!("cannot bind {addr}: {e}")))?;
    tracing::info!(addr = %listener.local_addr().expect("bound"), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Internal(e.to_string()))
}
