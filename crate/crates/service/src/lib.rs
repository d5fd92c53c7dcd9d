//! HTTP API for live trials.
//!
//! Every trial is an event-sourced [`TrialState`](car_core::TrialState): its
//! JSONL log on disk is the source of truth and the in-memory state is the
//! replay of that log. Enrollments in one trial are serialized by a per-trial
//! lock; separate trials proceed in parallel.

pub mod error;
pub mod store;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use car_core::engine::ThetaSummary;
use car_core::{Arm, TrialConfig, UnitRecord};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::{ErrorBody, ServiceError};
pub use store::{Store, TrialRecord, TrialSummary, TrialView};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Bearer token required on every route except `/health`.
    pub token: Option<String>,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(store: Arc<Store>, token: Option<String>) -> Self {
        AppState {
            store,
            token: token.map(Into::into),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
struct Created {
    trial_id: String,
    name: Option<String>,
    created_at: chrono::DateTime<chrono::Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub unit_index: u64,
    pub arm: Arm,
    pub prob: f64,
    pub lambda: Vec<f64>,
    pub theta_summary: Option<ThetaSummary>,
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
    limit: Option<usize>,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok",
        version: VERSION,
    })
}

fn utf8(body: &Bytes) -> Result<&str, ServiceError> {
    std::str::from_utf8(body).map_err(|_| ServiceError::bad_request("request body is not UTF-8"))
}

async fn create_trial(State(app): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let config = TrialConfig::from_json(utf8(&body)?)?;
    let record = app.store.create(config).await?;
    let created = Created {
        trial_id: record.trial_id,
        name: record.name,
        created_at: record.created_at,
    };
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list_trials(State(app): State<AppState>) -> Json<Vec<TrialSummary>> {
    let mut out = Vec::new();
    for t in app.store.list().await {
        out.push(t.summary().await);
    }
    Json(out)
}

async fn get_trial(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<TrialView>, ServiceError> {
    Ok(Json(app.store.get(&id).await?.view().await))
}

fn covariates(body: &Bytes) -> Result<Vec<f64>, ServiceError> {
    let record = UnitRecord::parse(utf8(body)?)?;
    if record.u().is_some() {
        return Err(ServiceError::BadRequest {
            message: "external draws are not accepted by the service".into(),
            path: Some("u".into()),
        });
    }
    Ok(record.x().to_vec())
}

async fn enroll(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<EnrollResponse>, ServiceError> {
    let trial = app.store.get(&id).await?;
    let x = covariates(&body)?;
    let (a, ev, theta_summary) = trial.enroll(&x).await?;
    Ok(Json(EnrollResponse {
        unit_index: ev.unit_index,
        arm: a.arm,
        prob: ev.prob,
        lambda: ev.lambda,
        theta_summary,
    }))
}

async fn whatif(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<car_core::WhatIf>, ServiceError> {
    let trial = app.store.get(&id).await?;
    let x = covariates(&body)?;
    Ok(Json(trial.whatif(&x).await?))
}

async fn events(State(app): State<AppState>, Path(id): Path<String>, Query(q): Query<EventsQuery>) -> Result<Response, ServiceError> {
    let trial = app.store.get(&id).await?;
    let mut body = String::new();
    for line in trial.events(q.from, q.limit).await {
        body.push_str(&line);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from(body)).into_response())
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = &app.token else {
        return next.run(req).await;
    };
    if req.method() == Method::OPTIONS || req.uri().path() == "/health" {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(&**token) {
        next.run(req).await
    } else {
        ServiceError::Unauthorized.into_response()
    }
}

fn cors(origin: Option<&str>) -> CorsLayer {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers(Any)
}

pub fn router(app: AppState, cors_origin: Option<&str>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/trials", post(create_trial).get(list_trials))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/units", post(enroll))
        .route("/trials/{id}/whatif", post(whatif))
        .route("/trials/{id}/events", get(events))
        .layer(middleware::from_fn_with_state(app.clone(), require_token))
        .layer(cors(cors_origin))
        .with_state(app)
}

/// Open the data directory and build the full application.
pub fn app(config: &ServiceConfig) -> Result<Router, ServiceError> {
    let store = Arc::new(Store::open(&config.data_dir)?);
    Ok(router(AppState::new(store, config.token.clone()), config.cors_origin.as_deref()))
}

/// Serve until `shutdown` resolves. Every event is synced before its
/// response, so nothing is left to flush afterwards.
pub async fn serve(listener: tokio::net::TcpListener, config: &ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
    let app = app(config)?;
    let addr = listener.local_addr().ok();
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServiceError::io(addr.map(|a| a.to_string()).unwrap_or_default(), e))
}
