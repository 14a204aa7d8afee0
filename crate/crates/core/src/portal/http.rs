//! JSON API over the portal.
//!
//! | method | path            | body / query                                        |
//! |--------|-----------------|-----------------------------------------------------|
//! | POST   | `/v1/predict`   | `{user_id, text, context?, request_id?}`            |
//! | POST   | `/v1/select`    | `{user_id, request_id, function_id, satisfaction?}` |
//! | GET    | `/v1/functions` | `?user_id=`                                         |
//! | POST   | `/v1/functions` | `{user_id, app, action, contact?, description?}`    |
//! | DELETE | `/v1/functions` | `?user_id=&function_id=`                            |
//! | POST   | `/v1/retrain`   | `{user_id?}` (all stores when absent)               |
//! | GET    | `/v1/health`    |                                                     |
//! | GET    | `/v1/telemetry` | `?limit=&request_id=`                               |
//!
//! Errors come back as `{"error": <kind>, "message": <text>}`.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, FixedOffset, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Portal, PortalError, PredictRequest, SelectRequest};
use crate::encoder::ContextSnapshot;
use crate::memory::FunctionDescriptor;

impl PortalError {
    pub fn kind(&self) -> &'static str {
        match self {
            PortalError::InvalidRequest(_) => "invalid_request",
            PortalError::UnknownUser(_) => "unknown_user",
            PortalError::UnknownRequest(_) => "unknown_request",
            PortalError::UnknownFunction(_) => "unknown_function",
            PortalError::DuplicateSelection(_) => "duplicate_selection",
            PortalError::DuplicateFunction(_) => "duplicate_function",
            PortalError::LastFunction => "last_function",
            PortalError::Memory(_) => "memory",
            PortalError::Encoder(_) => "encoder",
            PortalError::Trainer(_) => "trainer",
            PortalError::Io(_) => "io",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            PortalError::InvalidRequest(_) | PortalError::Encoder(_) => StatusCode::BAD_REQUEST,
            PortalError::UnknownUser(_) | PortalError::UnknownRequest(_) | PortalError::UnknownFunction(_) => {
                StatusCode::NOT_FOUND
            }
            PortalError::DuplicateSelection(_) | PortalError::DuplicateFunction(_) | PortalError::LastFunction => {
                StatusCode::CONFLICT
            }
            PortalError::Memory(_) | PortalError::Trainer(_) | PortalError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

struct ApiError(PortalError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.0.kind(), "message": self.0.to_string()});
        (self.0.status(), Json(body)).into_response()
    }
}

impl From<PortalError> for ApiError {
    fn from(e: PortalError) -> Self {
        ApiError(e)
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(portal: Arc<Portal>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Portal) -> Result<T, PortalError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&portal))
        .await
        .map_err(|e| ApiError(PortalError::Io(format!("worker failed: {e}"))))?
        .map(Json)
        .map_err(ApiError)
}

fn utc_now_fixed() -> DateTime<FixedOffset> {
    Utc::now().fixed_offset()
}

#[derive(Debug, Deserialize)]
struct PredictBody {
    user_id: String,
    text: String,
    #[serde(default)]
    context: Option<ContextSnapshot>,
    #[serde(default)]
    request_id: Option<String>,
}

async fn predict(State(portal): State<Arc<Portal>>, Json(body): Json<PredictBody>) -> Response {
    let req = PredictRequest {
        user_id: body.user_id,
        text: body.text,
        context: body.context.unwrap_or_else(|| ContextSnapshot::at(utc_now_fixed())),
        request_id: body.request_id,
    };
    blocking(portal, move |p| p.predict(req)).await.into_response()
}

async fn select(State(portal): State<Arc<Portal>>, Json(body): Json<SelectRequest>) -> Response {
    blocking(portal, move |p| p.select(body)).await.into_response()
}

#[derive(Debug, Deserialize)]
struct UserQuery {
    user_id: String,
}

#[derive(Debug, Deserialize)]
struct AddFunctionBody {
    user_id: String,
    app: String,
    action: String,
    #[serde(default)]
    contact: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RemoveFunctionQuery {
    user_id: String,
    function_id: String,
}

#[derive(Debug, Serialize)]
struct Collection {
    user_id: String,
    functions: Vec<FunctionDescriptor>,
}

async fn list_functions(State(portal): State<Arc<Portal>>, Query(q): Query<UserQuery>) -> Response {
    blocking(portal, move |p| {
        let functions = p.list_functions(&q.user_id, Utc::now())?;
        Ok(Collection {
            user_id: q.user_id,
            functions,
        })
    })
    .await
    .into_response()
}

async fn add_function(State(portal): State<Arc<Portal>>, Json(b): Json<AddFunctionBody>) -> Response {
    blocking(portal, move |p| {
        let mut f = match &b.contact {
            Some(c) => FunctionDescriptor::chat(&b.app, c),
            None => FunctionDescriptor::new(&b.app, &b.action),
        };
        if b.contact.is_some() && b.action != f.action {
            return Err(PortalError::InvalidRequest("a contact is only allowed with the chat action".into()));
        }
        if let Some(d) = &b.description {
            f = f.with_description(d);
        }
        let functions = p.add_function(&b.user_id, f, Utc::now())?;
        Ok(Collection {
            user_id: b.user_id,
            functions,
        })
    })
    .await
    .into_response()
}

async fn remove_function(State(portal): State<Arc<Portal>>, Query(q): Query<RemoveFunctionQuery>) -> Response {
    blocking(portal, move |p| {
        let functions = p.remove_function(&q.user_id, &q.function_id)?;
        Ok(Collection {
            user_id: q.user_id,
            functions,
        })
    })
    .await
    .into_response()
}

#[derive(Debug, Default, Deserialize)]
struct RetrainBody {
    #[serde(default)]
    user_id: Option<String>,
}

async fn retrain(State(portal): State<Arc<Portal>>, body: Option<Json<RetrainBody>>) -> Response {
    let user = body.and_then(|Json(b)| b.user_id);
    blocking(portal, move |p| match user {
        Some(u) => Ok(json!({"reports": {u.clone(): p.retrain(&u)?}})),
        None => {
            let mut reports = serde_json::Map::new();
            let mut errors = serde_json::Map::new();
            for (key, r) in p.retrain_all() {
                match r {
                    Ok(rep) => {
                        reports.insert(key, serde_json::to_value(rep).expect("report serializes"));
                    }
                    Err(e) => {
                        errors.insert(key, json!(e.to_string()));
                    }
                }
            }
            Ok(json!({"reports": reports, "errors": errors}))
        }
    })
    .await
    .into_response()
}

async fn health(State(portal): State<Arc<Portal>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "users": portal.users().len()}))
}

#[derive(Debug, Deserialize)]
struct TelemetryQuery {
    #[serde(default)]
    limit: Option<usize>,
    #[serde(default)]
    request_id: Option<String>,
}

async fn telemetry(State(portal): State<Arc<Portal>>, Query(q): Query<TelemetryQuery>) -> Response {
    let events = match q.request_id {
        Some(id) => portal.telemetry().for_request(&id),
        None => portal.telemetry().recent(q.limit.unwrap_or(100)),
    };
    Json(json!({ "events": events })).into_response()
}

pub fn router(portal: Arc<Portal>) -> Router {
    Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/select", post(select))
        .route(
            "/v1/functions",
            get(list_functions).post(add_function).delete(remove_function),
        )
        .route("/v1/retrain", post(retrain))
        .route("/v1/health", get(health))
        .route("/v1/telemetry", get(telemetry))
        .with_state(portal)
}

fn until_next_hour(hour: u32) -> std::time::Duration {
    let now = Utc::now();
    let today = now
        .date_naive()
        .and_hms_opt(hour.min(23), 0, 0)
        .expect("valid hour")
        .and_utc();
    let next = if today > now { today } else { today + chrono::Duration::days(1) };
    (next - now).to_std().unwrap_or_default()
}

/// Serves until ctrl-c, retraining every store daily at the configured hour
/// and saving all state on shutdown.
pub async fn serve(portal: Arc<Portal>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let hour = portal.config().trainer.retrain_hour;
    let timer_portal = portal.clone();
    let timer = tokio::spawn(async move {
        loop {
            tokio::time::sleep(until_next_hour(hour)).await;
            let p = timer_portal.clone();
            let results = tokio::task::spawn_blocking(move || p.retrain_all()).await;
            if let Ok(results) = results {
                for (key, r) in results {
                    if let Err(e) = r {
                        tracing::warn!(store = %key, "scheduled retrain failed: {e}");
                    }
                }
            }
        }
    });
    let app = router(portal.clone());
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    timer.abort();
    if let Err(e) = portal.save_all() {
        tracing::warn!("saving state on shutdown failed: {e}");
    }
    result
}
