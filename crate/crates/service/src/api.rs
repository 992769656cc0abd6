//! HTTP endpoints.
//!
//! Bodies are parsed by hand so that malformed JSON gets the same error
//! envelope as every other failure.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;
use tsad_core::corpus::valid_series_id;
use tsad_core::io::{points_from_raw, RawPoint};
use tsad_core::selector::{select_for_series, DetectorChoice, SelectorBundle};
use tsad_core::series::validate;
use tsad_core::tuning::{check_alpha, DEFAULT_ALPHA};

use crate::error::{ServiceError, ServiceResult};
use crate::journal::Journal;
use crate::state::{Event, Registration, ReselectionPolicy, MIN_SERIES_LEN};
use crate::API_SCHEMA_VERSION;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Journal and feedback exports live here; `None` keeps state in memory.
    pub data_dir: Option<PathBuf>,
    pub policy: ReselectionPolicy,
    pub default_alpha: f64,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            policy: ReselectionPolicy::default(),
            default_alpha: DEFAULT_ALPHA,
            ui_dir: None,
        }
    }
}

type Slot = Arc<Mutex<Registration>>;

struct Shared {
    cfg: ServiceConfig,
    bundle: Option<SelectorBundle>,
    journal: Option<Journal>,
    series: RwLock<HashMap<String, Slot>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Opens the service state, replaying any journals under the data dir.
    pub fn open(cfg: ServiceConfig, bundle: Option<SelectorBundle>) -> ServiceResult<Self> {
        cfg.policy.check()?;
        check_alpha(cfg.default_alpha).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let journal = cfg.data_dir.as_deref().map(Journal::open).transpose()?;
        let mut series = HashMap::new();
        if let Some(j) = &journal {
            for (id, events) in j.read_all()? {
                let reg = Registration::replay(&id, &events, &cfg.policy)?;
                series.insert(id, Arc::new(Mutex::new(reg)));
            }
        }
        Ok(Self(Arc::new(Shared {
            cfg,
            bundle,
            journal,
            series: RwLock::new(series),
        })))
    }

    pub fn series_count(&self) -> usize {
        self.0.series.read().expect("series map lock").len()
    }

    fn slot(&self, id: &str) -> ServiceResult<Slot> {
        self.0
            .series
            .read()
            .expect("series map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn record(&self, id: &str, event: &Event) -> ServiceResult<()> {
        match &self.0.journal {
            Some(j) => j.append(id, event),
            None => Ok(()),
        }
    }

    fn export(&self, reg: &Registration) -> ServiceResult<()> {
        match &self.0.cfg.data_dir {
            Some(dir) => reg.export_feedback(&dir.join("feedback").join(&reg.id)),
            None => Ok(()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/series", post(register))
        .route("/series/{id}/points", post(append_points))
        .route("/series/{id}/result", get(result))
        .route("/series/{id}/feedback", post(feedback));
    if let Some(dir) = &state.0.cfg.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.with_state(state)
}

#[derive(Debug)]
pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = json!({
            "schema_version": API_SCHEMA_VERSION,
            "error": {"code": code, "message": self.0.to_string()},
        });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn bad(e: impl ToString) -> ServiceError {
    ServiceError::BadRequest(e.to_string())
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| bad(format!("malformed request body: {e}")))
}

fn parse_points(raw: &[RawPoint]) -> ServiceResult<Vec<(i64, f64)>> {
    points_from_raw(raw).map_err(bad)
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "schema_version": API_SCHEMA_VERSION,
        "status": "ok",
        "series": state.series_count(),
        "bundle": state.0.bundle.as_ref().map(|b| b.model_hash()),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterRequest {
    id: String,
    points: Vec<RawPoint>,
    alpha: Option<f64>,
}

#[derive(Serialize)]
struct RegisterResponse {
    schema_version: u32,
    id: String,
    created: bool,
    length: usize,
    alpha: f64,
    choice: DetectorChoice,
}

fn registered(reg: &Registration, created: bool) -> RegisterResponse {
    RegisterResponse {
        schema_version: API_SCHEMA_VERSION,
        id: reg.id.clone(),
        created,
        length: reg.series.len(),
        alpha: reg.alpha,
        choice: reg.choice,
    }
}

fn same_registration(
    slot: &Slot,
    series: &tsad_core::series::TimeSeries,
) -> ServiceResult<RegisterResponse> {
    let reg = slot.lock().expect("registration lock");
    if &reg.initial == series {
        Ok(registered(&reg, false))
    } else {
        Err(ServiceError::Conflict(reg.id.clone()))
    }
}

async fn register(State(state): State<AppState>, body: Bytes) -> ApiResult<RegisterResponse> {
    let req: RegisterRequest = parse_body(&body)?;
    if !valid_series_id(&req.id) {
        return Err(bad(format!("invalid series id {:?}", req.id)).into());
    }
    let series = validate(&parse_points(&req.points)?).map_err(bad)?;
    if series.len() < MIN_SERIES_LEN {
        return Err(bad(format!(
            "series needs at least {MIN_SERIES_LEN} points, got {}",
            series.len()
        ))
        .into());
    }
    let alpha = req.alpha.unwrap_or(state.0.cfg.default_alpha);
    check_alpha(alpha).map_err(bad)?;

    if let Ok(slot) = state.slot(&req.id) {
        return Ok(Json(same_registration(&slot, &series)?));
    }
    let choice = select_for_series(state.0.bundle.as_ref(), &series);
    let mut map = state.0.series.write().expect("series map lock");
    if let Some(slot) = map.get(&req.id) {
        return Ok(Json(same_registration(slot, &series)?));
    }
    let event = Event::Register {
        series: series.clone(),
        alpha,
        choice,
    };
    state.record(&req.id, &event)?;
    let reg = Registration::new(req.id.clone(), series, alpha, choice);
    let response = registered(&reg, true);
    map.insert(req.id, Arc::new(Mutex::new(reg)));
    Ok(Json(response))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointsRequest {
    points: Vec<RawPoint>,
}

async fn append_points(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::state::AppendOutcome> {
    let slot = state.slot(&id)?;
    let req: PointsRequest = parse_body(&body)?;
    let points = parse_points(&req.points)?;
    let mut reg = slot.lock().expect("registration lock");
    let policy = &state.0.cfg.policy;
    let (event, outcome) = reg.plan_append(&points, state.0.bundle.as_ref(), policy)?;
    state.record(&id, &event)?;
    reg.apply(&event, policy)?;
    if outcome.reselection_triggered {
        state.export(&reg)?;
    }
    Ok(Json(outcome))
}

fn query_alpha(query: Option<&str>) -> ServiceResult<Option<f64>> {
    let Some(q) = query else { return Ok(None) };
    let mut alpha = None;
    for pair in q.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        if k == "alpha" {
            let a: f64 = v
                .parse()
                .map_err(|_| bad(format!("alpha {v:?} is not a number")))?;
            check_alpha(a).map_err(bad)?;
            alpha = Some(a);
        }
    }
    Ok(alpha)
}

async fn result(
    State(state): State<AppState>,
    Path(id): Path<String>,
    RawQuery(query): RawQuery,
) -> ApiResult<crate::state::SeriesResult> {
    let slot = state.slot(&id)?;
    let alpha = query_alpha(query.as_deref())?;
    let reg = slot.lock().expect("registration lock");
    Ok(Json(reg.result(alpha.unwrap_or(reg.alpha))?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    index: usize,
    is_anomaly: bool,
}

async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::state::FeedbackOutcome> {
    let slot = state.slot(&id)?;
    let req: FeedbackRequest = parse_body(&body)?;
    let mut reg = slot.lock().expect("registration lock");
    let policy = &state.0.cfg.policy;
    let (event, outcome) =
        reg.plan_feedback(req.index, req.is_anomaly, state.0.bundle.as_ref(), policy)?;
    state.record(&id, &event)?;
    reg.apply(&event, policy)?;
    if outcome.reselection_triggered {
        state.export(&reg)?;
    }
    Ok(Json(outcome))
}
