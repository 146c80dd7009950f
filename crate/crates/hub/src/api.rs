use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use feedcap::corpus::{Dataset, Grammar, Scene};
use feedcap::fbn::{build_fbn_dataset, save_fbn_dataset};
use feedcap::feedback::{FeedbackStore, Rating, RoundEntry, SnapshotCaption};
use feedcap::rewards::FeedbackClass;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::board::{BoardError, Outcome, TaskBoard, DEFAULT_LEASE, DEFAULT_MAX_ROUNDS};
use crate::clock::Clock;
use crate::writer::StoreWriter;

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub lease: Duration,
    pub max_rounds: usize,
    /// Where `POST /export/fbn-dataset` also writes the examples as JSONL.
    pub export_path: Option<PathBuf>,
    pub grammar: Grammar,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            lease: DEFAULT_LEASE,
            max_rounds: DEFAULT_MAX_ROUNDS,
            export_path: None,
            grammar: Grammar::default(),
        }
    }
}

pub struct Hub {
    board: Mutex<TaskBoard>,
    scenes: HashMap<u64, Scene>,
    grammar: Grammar,
    writer: StoreWriter,
    clock: Arc<dyn Clock>,
    export_path: Option<PathBuf>,
    replies: Mutex<HashMap<String, (StatusCode, Value)>>,
    written: AtomicUsize,
}

impl Hub {
    /// Every snapshot image must have a scene in `dataset`, keyed by record id.
    pub fn new(
        snapshot: &[SnapshotCaption],
        dataset: &Dataset,
        store: FeedbackStore,
        clock: Arc<dyn Clock>,
        cfg: HubConfig,
    ) -> feedcap::Result<Arc<Self>> {
        let scenes: HashMap<u64, Scene> = dataset.records.iter().map(|r| (r.id, r.scene.clone())).collect();
        if let Some(s) = snapshot.iter().find(|s| !scenes.contains_key(&s.image_id)) {
            return Err(feedcap::Error::Config(format!(
                "snapshot image {} is not in the dataset",
                s.image_id
            )));
        }
        Ok(Arc::new(Self {
            board: Mutex::new(TaskBoard::new(snapshot, cfg.lease, cfg.max_rounds)?),
            scenes,
            grammar: cfg.grammar,
            writer: StoreWriter::spawn(store),
            clock,
            export_path: cfg.export_path,
            replies: Mutex::new(HashMap::new()),
            written: AtomicUsize::new(0),
        }))
    }
}

#[derive(Debug)]
enum ApiError {
    NotFound(String),
    Conflict(String),
    Invalid { message: String, path: Option<String> },
    Internal(String),
}

impl ApiError {
    fn invalid(message: impl Into<String>) -> Self {
        ApiError::Invalid {
            message: message.into(),
            path: None,
        }
    }
}

impl From<feedcap::Error> for ApiError {
    fn from(e: feedcap::Error) -> Self {
        match e {
            feedcap::Error::Validation { ref path, .. } => ApiError::Invalid {
                path: Some(path.clone()),
                message: e.to_string(),
            },
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<BoardError> for ApiError {
    fn from(e: BoardError) -> Self {
        match e {
            BoardError::NotFound(_) => ApiError::NotFound(e.to_string()),
            BoardError::Conflict { .. } => ApiError::Conflict(e.to_string()),
            BoardError::Invalid(e) => e.into(),
        }
    }
}

impl ApiError {
    fn status_and_body(&self) -> (StatusCode, Value) {
        let (status, kind, message, path) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m, None),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "conflict", m, None),
            ApiError::Invalid { message, path } => (StatusCode::BAD_REQUEST, "invalid", message, path.as_ref()),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        let mut body = json!({ "error": kind, "message": message });
        if let Some(p) = path {
            body["path"] = json!(p);
        }
        (status, body)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = self.status_and_body();
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Round1Body {
    quality: Rating,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

fn parse_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::invalid(format!("`{raw}` is not a numeric id")))
}

fn parse_round(query: Option<String>) -> Result<Option<u8>, ApiError> {
    let mut round = None;
    for pair in query.as_deref().unwrap_or("").split('&').filter(|p| !p.is_empty()) {
        match pair.split_once('=') {
            Some(("round", "")) => {}
            Some(("round", "1")) => round = Some(1),
            Some(("round", "2")) => round = Some(2),
            Some(("round", v)) => return Err(ApiError::invalid(format!("round must be 1 or 2, got `{v}`"))),
            _ => return Err(ApiError::invalid(format!("unknown query parameter `{pair}`"))),
        }
    }
    Ok(round)
}

async fn next_task(State(hub): State<Arc<Hub>>, RawQuery(query): RawQuery) -> ApiResult {
    let round = parse_round(query)?;
    let now = hub.clock.now();
    let task = hub.board.lock().unwrap().next(round, now);
    Ok(match task {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn get_task(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> ApiResult {
    let id = parse_id(&id)?;
    let view = hub.board.lock().unwrap().get(id, hub.clock.now())?;
    Ok(Json(view).into_response())
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum Submitted {
    Closed {
        task_id: u64,
        record: feedcap::feedback::FeedbackRecord,
    },
    Queued {
        task_id: u64,
        next_task_id: u64,
    },
    Continued {
        task_id: u64,
        next: crate::board::TaskView,
    },
}

async fn settle(hub: &Hub, task_id: u64, outcome: Outcome) -> Result<Value, ApiError> {
    let reply = match outcome {
        Outcome::Completed(record) => {
            hub.writer.append(record.clone()).await?;
            hub.written.fetch_add(1, Ordering::SeqCst);
            Submitted::Closed { task_id, record }
        }
        Outcome::Queued(next_task_id) => Submitted::Queued { task_id, next_task_id },
        Outcome::Continued(next) => Submitted::Continued { task_id, next },
    };
    serde_json::to_value(reply).map_err(|e| ApiError::Internal(e.to_string()))
}

/// Replays the stored reply when an `Idempotency-Key` header repeats.
async fn submit<F>(hub: &Hub, headers: &HeaderMap, scope: String, task_id: u64, apply: F) -> ApiResult
where
    F: FnOnce(&mut TaskBoard) -> Result<Outcome, BoardError>,
{
    let key = headers
        .get("idempotency-key")
        .map(|v| v.to_str().map(|k| format!("{scope}#{k}")))
        .transpose()
        .map_err(|_| ApiError::invalid("idempotency-key must be visible ASCII"))?;
    if let Some(k) = &key {
        if let Some((status, body)) = hub.replies.lock().unwrap().get(k) {
            return Ok((*status, Json(body.clone())).into_response());
        }
    }
    let outcome = apply(&mut hub.board.lock().unwrap())?;
    let body = settle(hub, task_id, outcome).await?;
    if let Some(k) = key {
        hub.replies.lock().unwrap().insert(k, (StatusCode::OK, body.clone()));
    }
    Ok(Json(body).into_response())
}

async fn round1(State(hub): State<Arc<Hub>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let id = parse_id(&id)?;
    let req: Round1Body = parse_body(&body)?;
    let now = hub.clock.now();
    submit(&hub, &headers, format!("{id}/round1"), id, |b| {
        b.submit_round1(id, req.quality, now)
    })
    .await
}

async fn round2(State(hub): State<Arc<Hub>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let id = parse_id(&id)?;
    let entry: RoundEntry = parse_body(&body)?;
    let now = hub.clock.now();
    submit(&hub, &headers, format!("{id}/round2"), id, |b| {
        b.submit_round2(id, entry, now)
    })
    .await
}

#[derive(Debug, Serialize)]
struct CellView<'a> {
    object: &'a str,
    attribute: &'a str,
    action: Option<&'a str>,
}

async fn scene(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> ApiResult {
    let id = parse_id(&id)?;
    let scene = hub
        .scenes
        .get(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown image {id}")))?;
    let g = &hub.grammar;
    let cells = scene
        .cells
        .iter()
        .map(|c| {
            Ok(CellView {
                object: g.object(c.object)?,
                attribute: g.attribute(c.attribute)?,
                action: c.action.map(|a| g.action(a)).transpose()?,
            })
        })
        .collect::<feedcap::Result<Vec<_>>>()?;
    let relation = g.relation(scene.relation)?.join(" ");
    Ok(Json(json!({
        "image_id": id,
        "scene": scene,
        "cells": cells,
        "relation_words": relation,
    }))
    .into_response())
}

async fn progress(State(hub): State<Arc<Hub>>) -> ApiResult {
    let p = hub.board.lock().unwrap().progress(hub.clock.now());
    let mut body = serde_json::to_value(p).map_err(|e| ApiError::Internal(e.to_string()))?;
    body["records_written"] = json!(hub.written.load(Ordering::SeqCst));
    Ok(Json(body).into_response())
}

async fn export(State(hub): State<Arc<Hub>>) -> ApiResult {
    let records = hub.writer.load().await?;
    let examples = build_fbn_dataset(&records).map_err(|e| ApiError::Internal(e.to_string()))?;
    if let Some(path) = &hub.export_path {
        save_fbn_dataset(&examples, path)?;
    }
    let mut labels: HashMap<FeedbackClass, usize> = FeedbackClass::ALL.iter().map(|&c| (c, 0)).collect();
    for e in &examples {
        *labels.get_mut(&e.label).unwrap() += 1;
    }
    let labels: serde_json::Map<String, Value> = FeedbackClass::ALL
        .iter()
        .map(|c| {
            (
                serde_json::to_value(c).unwrap().as_str().unwrap().to_string(),
                json!(labels[c]),
            )
        })
        .collect();
    Ok(Json(json!({
        "records": records.len(),
        "examples": examples,
        "labels": labels,
        "path": hub.export_path,
    }))
    .into_response())
}

/// The REST API; `ui_dir`, when given, is served for every other path.
pub fn router(hub: Arc<Hub>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/round1", post(round1))
        .route("/tasks/{id}/round2", post(round2))
        .route("/images/{id}/scene", get(scene))
        .route("/progress", get(progress))
        .route("/export/fbn-dataset", post(export))
        .route(
            "/schema/feedback.json",
            get(|| async { ([("content-type", "application/schema+json")], crate::FEEDBACK_SCHEMA) }),
        );
    let api = match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    };
    api.with_state(hub)
}

pub async fn serve(hub: Arc<Hub>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(hub, ui_dir)).await
}
