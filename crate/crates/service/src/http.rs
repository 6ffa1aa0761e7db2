//! HTTP+JSON API and the server-sent event stream.
//!
//! Error responses carry `{"code": ..., "message": ...}`. Every route except
//! `/health` and `/auth/login` needs a bearer token; `/events` also accepts
//! it as `?token=` because browser event sources cannot set headers.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use firewatch_core::{DeviceId, RiskLevel};
use firewatch_crypto::Registry;
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::BroadcastStream;

use crate::auth::{AuthError, Principal, Role};
use crate::clock::Clock;
use crate::core::{
    AlertState, AssessmentSummary, IngestCore, IngestError, IngestOutcome, StreamEvent,
};

const DEFAULT_PAGE: usize = 100;
const MAX_PAGE: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    pub core: Arc<Mutex<IngestCore>>,
    pub clock: Arc<dyn Clock>,
    /// Source for `POST /admin/registry/reload`.
    pub registry_path: Option<PathBuf>,
}

impl AppState {
    pub fn new(core: IngestCore, clock: Arc<dyn Clock>, registry_path: Option<PathBuf>) -> Self {
        Self {
            core: Arc::new(Mutex::new(core)),
            clock,
            registry_path,
        }
    }

    fn lock(&self) -> MutexGuard<'_, IngestCore> {
        self.core.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        IngestError::Auth(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (
            self.status,
            Json(json!({ "code": self.code, "message": self.message })),
        )
            .into_response();
        if self.status == StatusCode::UNAUTHORIZED {
            resp.headers_mut().insert(
                header::WWW_AUTHENTICATE,
                header::HeaderValue::from_static("Bearer"),
            );
        }
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim())
}

fn authorize(state: &AppState, headers: &HeaderMap, required: Role) -> ApiResult<Principal> {
    Ok(state
        .lock()
        .authenticate(bearer(headers), state.now(), required)?)
}

fn parse_device(imei: &str) -> ApiResult<DeviceId> {
    imei.parse()
        .map_err(|e: firewatch_core::measurement::InvalidDeviceId| {
            ApiError::bad_request(e.to_string())
        })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/auth/login", post(login))
        .route("/packages", post(post_package))
        .route("/areas", get(list_areas))
        .route("/areas/{id}", get(area_detail))
        .route("/areas/{id}/measurements", get(area_measurements))
        .route("/areas/{id}/declarations", post(declare))
        .route("/alerts", get(list_alerts))
        .route(
            "/devices/{imei}/frequency",
            put(set_frequency).get(get_frequency),
        )
        .route("/events", get(events))
        .route("/admin/tokens", post(issue_token))
        .route("/admin/registry/reload", post(reload_registry))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let core = state.lock();
    Json(json!({
        "status": "ok",
        "seq": core.last_seq(),
        "devices": core.registry().len(),
        "areas": core.areas(state.now()).len(),
        "rejections": core.rejections(),
    }))
}

#[derive(Deserialize)]
struct LoginRequest {
    username: String,
    password: String,
}

#[derive(Serialize)]
struct TokenResponse {
    token: String,
    username: String,
    role: Role,
    expires_at: DateTime<Utc>,
}

async fn login(
    State(state): State<AppState>,
    Json(req): Json<LoginRequest>,
) -> ApiResult<Json<TokenResponse>> {
    let (token, rec) = state
        .lock()
        .login(state.now(), &req.username, &req.password)?;
    Ok(Json(TokenResponse {
        token,
        username: rec.username,
        role: rec.role,
        expires_at: rec.expires_at,
    }))
}

async fn post_package(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Operator)?;
    let contact = match headers.get("x-device-id") {
        Some(v) => {
            Some(parse_device(v.to_str().map_err(|_| {
                ApiError::bad_request("x-device-id is not ASCII")
            })?)?)
        }
        None => None,
    };
    let now = state.now();
    let mut core = state.lock();
    let outcome = core.ingest(now, &body)?;
    let contact = contact.unwrap_or_else(|| outcome.device_id().clone());
    let frequency = if core.registry().get(&contact).is_some() {
        core.collect_frequency(now, &contact).unwrap_or_else(|e| {
            tracing::warn!(error = %e, "could not hand out pending frequency");
            None
        })
    } else {
        None
    };
    drop(core);
    let resp = match outcome {
        IngestOutcome::Accepted {
            seq,
            package_id,
            device_id,
            assessment,
            alerts,
        } => (
            StatusCode::CREATED,
            Json(json!({
                "status": "accepted",
                "seq": seq,
                "package_id": package_id,
                "device_id": device_id,
                "assessment": AssessmentSummary::from(&assessment),
                "alerts": alerts,
                "period_seconds": frequency,
            })),
        ),
        IngestOutcome::Duplicate {
            package_id,
            device_id,
        } => (
            StatusCode::OK,
            Json(json!({
                "status": "duplicate",
                "package_id": package_id,
                "device_id": device_id,
                "period_seconds": frequency,
            })),
        ),
    };
    Ok(resp.into_response())
}

async fn list_areas(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Viewer)?;
    Ok(Json(state.lock().areas(state.now())).into_response())
}

async fn area_detail(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Viewer)?;
    let core = state.lock();
    let detail = core
        .area_detail(&id, state.now())
        .ok_or_else(|| ApiError::not_found("unknown-area", format!("unknown area {id}")))?;
    Ok(Json(detail).into_response())
}

#[derive(Deserialize)]
struct MeasurementQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn area_measurements(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<MeasurementQuery>,
) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Viewer)?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!(
            "limit must be in 1..={MAX_PAGE}"
        )));
    }
    let offset = q.offset.unwrap_or(0);
    let core = state.lock();
    let all = core
        .measurements(&id, q.from, q.to)
        .ok_or_else(|| ApiError::not_found("unknown-area", format!("unknown area {id}")))?;
    let matching: Vec<_> = all.collect();
    let total = matching.len();
    let items: Vec<_> = matching.into_iter().skip(offset).take(limit).collect();
    Ok(Json(
        json!({ "area_id": id, "total": total, "offset": offset, "limit": limit, "items": items }),
    )
    .into_response())
}

#[derive(Deserialize)]
struct DeclarationRequest {
    level: RiskLevel,
    ttl_seconds: u64,
}

async fn declare(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<DeclarationRequest>,
) -> ApiResult<Response> {
    let principal = authorize(&state, &headers, Role::Operator)?;
    let d = state.lock().declare(
        state.now(),
        &principal,
        &id,
        req.level,
        Duration::from_secs(req.ttl_seconds),
    )?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "area_id": id, "declaration": d })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct AlertQuery {
    state: Option<AlertState>,
    area: Option<String>,
}

async fn list_alerts(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<AlertQuery>,
) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Viewer)?;
    let core = state.lock();
    Ok(Json(core.alerts(q.state, q.area.as_deref())).into_response())
}

#[derive(Deserialize)]
struct FrequencyRequest {
    period_seconds: u32,
}

async fn set_frequency(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(imei): Path<String>,
    Json(req): Json<FrequencyRequest>,
) -> ApiResult<Response> {
    let principal = authorize(&state, &headers, Role::Operator)?;
    let device = parse_device(&imei)?;
    let status =
        state
            .lock()
            .set_frequency(state.now(), &principal, &device, req.period_seconds)?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn get_frequency(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(imei): Path<String>,
) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Viewer)?;
    let device = parse_device(&imei)?;
    let core = state.lock();
    let body = match core.frequency(&device)? {
        Some(s) => serde_json::to_value(s).unwrap(),
        None => json!({ "device_id": device, "period_seconds": null, "state": null }),
    };
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    token: Option<String>,
    after: Option<u64>,
}

fn to_sse(e: StreamEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.as_str())
        .data(e.data.to_string())
}

async fn events(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let token = bearer(&headers).or(q.token.as_deref());
    let now = state.now();
    let (principal, (backlog, rx)) = {
        let core = state.lock();
        let principal = core.authenticate(token, now, Role::Viewer)?;
        let after = match headers.get("last-event-id") {
            Some(v) => v
                .to_str()
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be a sequence number"))?,
            None => q.after.unwrap_or(0),
        };
        (principal, core.subscribe(after))
    };
    let last_backlog = backlog.last().map(|e| e.seq);
    let live = BroadcastStream::new(rx)
        .take_while(|r| futures::future::ready(r.is_ok()))
        .filter_map(move |r| {
            futures::future::ready(r.ok().filter(|e| last_backlog.is_none_or(|s| e.seq > s)))
        });
    let remaining = (principal.expires_at - now).to_std().unwrap_or_default();
    let stream = futures::stream::iter(backlog)
        .chain(live)
        .map(|e| Ok(to_sse(e)))
        .take_until(tokio::time::sleep(remaining));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct IssueTokenRequest {
    username: String,
    role: Role,
    ttl_seconds: Option<i64>,
}

async fn issue_token(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<IssueTokenRequest>,
) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Admin)?;
    let ttl = req.ttl_seconds.map(chrono::Duration::seconds);
    let mut core = state.lock();
    let ttl = ttl.unwrap_or_else(|| core.token_ttl());
    let (token, rec) = core.issue_token(state.now(), &req.username, req.role, ttl)?;
    let body = TokenResponse {
        token,
        username: rec.username,
        role: rec.role,
        expires_at: rec.expires_at,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn reload_registry(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    authorize(&state, &headers, Role::Admin)?;
    let path = state.registry_path.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "no-registry-path",
            "service was started without a registry path",
        )
    })?;
    let registry = tokio::task::spawn_blocking(move || Registry::load(&path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))?
        .map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid-registry",
                e.to_string(),
            )
        })?;
    let devices = registry.len();
    state.lock().replace_registry(registry);
    tracing::info!(devices, "registry reloaded");
    Ok(Json(json!({ "devices": devices })).into_response())
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
