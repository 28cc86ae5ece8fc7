//! HTTP front end for deck storage, validation and simulated execution.
//!
//! | Route | Effect |
//! |---|---|
//! | `GET /decks`, `POST /decks` | list ids, store a deck (upsert by `deckId`) |
//! | `GET /decks/{id}`, `DELETE /decks/{id}` | fetch or remove a deck |
//! | `POST /decks/{id}/validate` | diagnostics list |
//! | `GET /catalog` | card descriptors |
//! | `GET /executions`, `POST /executions` | list runs, start one |
//! | `GET /executions/{id}` | record with the trace so far |
//! | `GET /executions/{id}/events` | server-sent events, resumable by `Last-Event-ID` |
//! | `POST /executions/{id}/estop` | e-stop, idempotent |

mod error;
mod execution;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cardkit_core::catalog::Catalog;
use cardkit_core::model::Deck;
use cardkit_core::runtime::RunOptions;
use cardkit_core::sim::{SimConfig, SimWorld};
use cardkit_core::validate::{has_errors, validate_deck, Diagnostic};
use futures::{Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;

pub use error::{ApiError, StartupError};
pub use execution::{ExecState, Execution, ExecutionRecord};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Simulated seconds per wall-clock second; zero runs unpaced.
    pub ratio: f64,
    pub data_dir: Option<PathBuf>,
    /// Deck passes allowed under RepeatDeck; `None` repeats until stopped.
    pub max_repeats: Option<u32>,
    /// Default telemetry interval in ticks for new executions.
    pub telemetry_every: Option<u32>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            ratio: 10.0,
            data_dir: None,
            max_repeats: None,
            telemetry_every: Some(10),
        }
    }
}

#[derive(Debug)]
struct Inner {
    catalog: Arc<Catalog>,
    config: ServiceConfig,
    decks: RwLock<BTreeMap<String, Deck>>,
    executions: RwLock<BTreeMap<String, Arc<Execution>>>,
}

#[derive(Debug, Clone)]
pub struct AppState(Arc<Inner>);

/// File-name safe form of an id.
fn file_name(id: &str) -> String {
    let mut out = String::new();
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("~{b:02x}"));
        }
    }
    out + ".json"
}

fn read_dir_json(dir: &Path) -> Result<Vec<(PathBuf, String)>, StartupError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StartupError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path).map_err(io(&path))?;
            out.push((path, text));
        }
    }
    Ok(out)
}

impl AppState {
    /// Builds the state, loading any snapshots under the data directory.
    pub fn new(catalog: Catalog, config: ServiceConfig) -> Result<Self, StartupError> {
        let mut decks = BTreeMap::new();
        let mut executions = BTreeMap::new();
        if let Some(dir) = &config.data_dir {
            for (path, text) in read_dir_json(&dir.join("decks"))? {
                let deck = Deck::from_json(&text).map_err(|e| StartupError::Snapshot { path, reason: e.to_string() })?;
                decks.insert(deck.deck_id.clone(), deck);
            }
            for (path, text) in read_dir_json(&dir.join("executions"))? {
                let record: ExecutionRecord = serde_json::from_str(&text)
                    .map_err(|e| StartupError::Snapshot { path, reason: e.to_string() })?;
                executions.insert(record.execution_id.clone(), Arc::new(Execution::restored(record)));
            }
        }
        Ok(AppState(Arc::new(Inner {
            catalog: Arc::new(catalog),
            config,
            decks: RwLock::new(decks),
            executions: RwLock::new(executions),
        })))
    }

    pub fn execution(&self, id: &str) -> Option<Arc<Execution>> {
        self.0.executions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    fn deck(&self, id: &str) -> Result<Deck, ApiError> {
        self.0
            .decks
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("deck `{id}`")))
    }

    fn snapshot_path(&self, kind: &str, id: &str) -> Option<PathBuf> {
        self.0.config.data_dir.as_ref().map(|d| d.join(kind).join(file_name(id)))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/decks", get(list_decks).post(create_deck))
        .route("/decks/{id}", get(get_deck).delete(delete_deck))
        .route("/decks/{id}/validate", post(validate))
        .route("/catalog", get(catalog))
        .route("/executions", get(list_executions).post(create_execution))
        .route("/executions/{id}", get(get_execution))
        .route("/executions/{id}/events", get(events))
        .route("/executions/{id}/estop", post(estop))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}

fn json_text(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

async fn list_decks(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.0.decks.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect())
}

async fn create_deck(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    parse_body::<serde_json::Value>(text.as_bytes())?;
    let deck = Deck::from_json(text)?;
    let id = deck.deck_id.clone();
    if let Some(path) = state.snapshot_path("decks", &id) {
        fs::write(path, deck.to_canonical_json())?;
    }
    state.0.decks.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), deck);
    Ok((StatusCode::CREATED, Json(json!({ "deckId": id }))).into_response())
}

async fn get_deck(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(json_text(StatusCode::OK, state.deck(&id)?.to_canonical_json()))
}

async fn delete_deck(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    let removed = state.0.decks.write().unwrap_or_else(|e| e.into_inner()).remove(&id);
    if removed.is_none() {
        return Err(ApiError::NotFound(format!("deck `{id}`")));
    }
    if let Some(path) = state.snapshot_path("decks", &id) {
        if path.exists() {
            fs::remove_file(path)?;
        }
    }
    Ok(StatusCode::NO_CONTENT)
}

async fn validate(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<Diagnostic>>, ApiError> {
    Ok(Json(validate_deck(&state.deck(&id)?, &state.0.catalog)))
}

async fn catalog(State(state): State<AppState>) -> Response {
    json_text(StatusCode::OK, state.0.catalog.to_json())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct StartRequest {
    deck_id: String,
    #[serde(default)]
    world: Option<serde_json::Value>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    max_sim_time: Option<f64>,
    #[serde(default)]
    telemetry_every: Option<u32>,
    #[serde(default)]
    watchdog: Option<f64>,
}

async fn create_execution(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: StartRequest = parse_body(&body)?;
    let deck = state.deck(&req.deck_id)?;
    let diagnostics = validate_deck(&deck, &state.0.catalog);
    if has_errors(&diagnostics) {
        return Err(ApiError::Invalid(diagnostics));
    }
    let world = match &req.world {
        Some(w) => SimConfig::from_json(&w.to_string()).map_err(|e| ApiError::BadRequest(format!("world: {e}")))?,
        None => SimConfig::default(),
    };
    SimWorld::new(world.clone(), req.seed).map_err(|e| ApiError::BadRequest(format!("world: {e}")))?;
    let config = &state.0.config;
    let opts = RunOptions {
        max_repeats: config.max_repeats,
        max_sim_time: req.max_sim_time,
        watchdog: req.watchdog,
        telemetry_every: req.telemetry_every.or(config.telemetry_every),
        ..RunOptions::default()
    };
    let id = uuid::Uuid::new_v4().to_string();
    let exec = Arc::new(Execution::pending(id.clone(), deck.deck_id.clone()));
    state
        .0
        .executions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id.clone(), exec.clone());
    let job = execution::Job {
        deck,
        catalog: state.0.catalog.clone(),
        world,
        seed: req.seed,
        opts,
        ratio: config.ratio,
        snapshot: state.snapshot_path("executions", &id),
    };
    execution::spawn(exec, job);
    Ok((StatusCode::CREATED, Json(json!({ "executionId": id }))).into_response())
}

async fn list_executions(State(state): State<AppState>) -> Json<Vec<serde_json::Value>> {
    let all = state.0.executions.read().unwrap_or_else(|e| e.into_inner());
    Json(
        all.values()
            .map(|e| {
                let r = e.record();
                json!({ "executionId": r.execution_id, "deckId": r.deck_id, "state": r.state, "startedAt": r.started_at })
            })
            .collect(),
    )
}

fn find(state: &AppState, id: &str) -> Result<Arc<Execution>, ApiError> {
    state.execution(id).ok_or_else(|| ApiError::NotFound(format!("execution `{id}`")))
}

async fn get_execution(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ExecutionRecord>, ApiError> {
    Ok(Json(find(&state, &id)?.record()))
}

async fn events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let exec = find(&state, &id)?;
    let start = match headers.get("last-event-id") {
        Some(v) => {
            let seq: u64 = v
                .to_str()
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| ApiError::BadRequest("Last-Event-ID must be a sequence number".into()))?;
            exec.index_after(seq)
        }
        None => 0,
    };
    let stream = exec
        .stream(start)
        .map(|e| Ok(Event::default().id(e.seq.to_string()).data(e.to_json())));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn estop(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let exec = find(&state, &id)?;
    exec.estop();
    Ok((StatusCode::ACCEPTED, Json(json!({ "executionId": id, "state": exec.state() }))).into_response())
}
