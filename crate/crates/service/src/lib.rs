//! HTTP/JSON service for rating sessions.
//!
//! Routes:
//!
//! | method | path | body / query | result |
//! |---|---|---|---|
//! | GET, POST | `/api/session` | `{"rater_id"}` or `?rater_id=` | `{session_id, rater_id, progress}` |
//! | GET | `/api/session/{id}/next` | | item payload or `{done: true, progress}` |
//! | POST | `/api/session/{id}/response` | `{"item_id", "answer": "yes"\|"no"}` | `{ok, item_id, progress}` |
//! | GET | `/api/admin/export?ref=A1` | `Authorization: Bearer <token>` | log, agreement table, consistency |
//! | GET | `/patches/{name}.png` | | patch image |
//!
//! Errors are `{"error": <code>, "message": <text>}` with 400, 401, 404,
//! 409, 422 or 500 status.

pub mod store;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use vessel_agreement::patches::{RatingSet, RATING_SET_FILE};
use vessel_agreement::rating::{
    agreement_table, intra_rater_consistency, AgreementTable, Consistency, Reference,
};

pub use store::{item_order, session_id, NextItem, Progress, Store};
use store::{SubmitError, SubmitOutcome};

/// Environment variable holding the admin bearer token.
pub const ADMIN_TOKEN_ENV: &str = "RATING_ADMIN_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("I/O error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("corrupt log record: {0}")]
    Corrupt(#[source] serde_json::Error),
    #[error("log refers to unknown item `{0}`")]
    UnknownItem(String),
    #[error(transparent)]
    Core(#[from] vessel_agreement::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory holding `rating_set.json` and `patches/`.
    pub rating_dir: PathBuf,
    /// Directory for the response and session logs.
    pub log_dir: PathBuf,
    pub admin_token: Option<String>,
    /// Allowed UI origin; `None` allows any origin.
    pub cors_origin: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<Store>>,
    patches_dir: PathBuf,
    admin_token: Option<String>,
}

impl AppState {
    pub fn open(config: &ServiceConfig) -> Result<AppState, ServiceError> {
        let set = RatingSet::load(config.rating_dir.join(RATING_SET_FILE))?;
        let store = Store::open(set, &config.log_dir)?;
        Ok(AppState {
            store: Arc::new(Mutex::new(store)),
            patches_dir: config.rating_dir.join("patches"),
            admin_token: config.admin_token.clone(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Store> {
        // A panic mid-request cannot leave the log half-written (appends are
        // single writes), so a poisoned lock is still usable.
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.code, "message": self.message})),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize, Default)]
struct RaterQuery {
    rater_id: Option<String>,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

async fn open_session(
    State(state): State<AppState>,
    Query(query): Query<RaterQuery>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let from_body = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        parse_body::<RaterQuery>(&body)?.rater_id
    };
    let rater_id = from_body.or(query.rater_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "rater_id is required",
        )
    })?;
    if !store::valid_rater_id(&rater_id) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_rater_id",
            "rater_id must be 1-64 characters from [A-Za-z0-9_.-]",
        ));
    }
    let info = state
        .lock()
        .open_session(&rater_id)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))?;
    Ok(Json(info))
}

async fn next_item(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<NextItem>> {
    state.lock().next_item(&id).map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_session",
            format!("no session {id}"),
        )
    })
}

#[derive(Deserialize)]
struct SubmitBody {
    item_id: String,
    answer: String,
}

#[derive(Serialize)]
struct Ack {
    ok: bool,
    item_id: String,
    progress: Progress,
}

async fn submit(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Ack>> {
    let body: SubmitBody = parse_body(&body)?;
    let result = state.lock().submit(&id, &body.item_id, &body.answer);
    match result {
        Ok(progress) => Ok(Json(Ack {
            ok: true,
            item_id: body.item_id,
            progress,
        })),
        Err(SubmitOutcome::Io(e)) => {
            log::error!("response log append failed: {e}");
            Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "io",
                e.to_string(),
            ))
        }
        Err(SubmitOutcome::Rejected(e)) => Err(match e {
            SubmitError::UnknownSession => ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_session",
                format!("no session {id}"),
            ),
            SubmitError::InvalidAnswer(a) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_answer",
                format!("answer `{a}` is not one of yes, no"),
            ),
            SubmitError::AlreadyAnswered(item) => ApiError::new(
                StatusCode::CONFLICT,
                "already_answered",
                format!("{item} was already answered; the first response stands"),
            ),
            SubmitError::OutOfOrder { expected, got } => ApiError::new(
                StatusCode::CONFLICT,
                "out_of_order",
                match expected {
                    Some(e) => format!("expected a response to {e}, got {got}"),
                    None => format!("session is complete; got {got}"),
                },
            ),
        }),
    }
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(rename = "ref")]
    reference: Option<String>,
}

#[derive(Serialize)]
struct Export {
    reference: Reference,
    log: String,
    agreement_csv: String,
    table: AgreementTable,
    consistency: Vec<Consistency>,
}

fn authorized(headers: &HeaderMap, token: &str) -> bool {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t.len() == token.len() && constant_time_eq(t.as_bytes(), token.as_bytes()))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Json<Export>> {
    let Some(token) = state.admin_token.as_deref() else {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            format!("export is disabled; set {ADMIN_TOKEN_ENV}"),
        ));
    };
    if !authorized(&headers, token) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "bad or missing bearer token",
        ));
    }
    let reference: Reference =
        q.reference
            .as_deref()
            .unwrap_or("A1")
            .parse()
            .map_err(|e: vessel_agreement::Error| {
                ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string())
            })?;
    let (log, responses, items) = {
        let store = state.lock();
        (
            store.log_snapshot(),
            store.responses(),
            store.rating_set().items.clone(),
        )
    };
    let table = agreement_table(&responses, &items, reference)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "analysis", e.to_string()))?;
    Ok(Json(Export {
        reference,
        log,
        agreement_csv: table.to_csv_string(),
        consistency: intra_rater_consistency(&responses, &items),
        table,
    }))
}

fn valid_patch_name(name: &str) -> bool {
    name.strip_suffix(".png").is_some_and(|stem| {
        !stem.is_empty()
            && stem
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    })
}

async fn patch_image(
    State(state): State<AppState>,
    UrlPath(name): UrlPath<String>,
) -> ApiResult<Response> {
    if !valid_patch_name(&name) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            "no such patch",
        ));
    }
    let path: PathBuf = state.patches_dir.join(&name);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            "no such patch",
        )),
        Err(e) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "io",
            e.to_string(),
        )),
    }
}

fn cors(origin: Option<&str>) -> CorsLayer {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(v) => AllowOrigin::exact(v),
        None => AllowOrigin::from(Any),
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION])
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    Router::new()
        .route("/api/session", get(open_session).post(open_session))
        .route("/api/session/{id}/next", get(next_item))
        .route("/api/session/{id}/response", post(submit))
        .route("/api/admin/export", get(export))
        .route("/patches/{name}", get(patch_image))
        .layer(cors(cors_origin))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    config: &ServiceConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let state = AppState::open(config)?;
    let app = router(state, config.cors_origin.as_deref());
    let addr = listener
        .local_addr()
        .map_err(|e| ServiceError::Io(Path::new("<listener>").into(), e))?;
    log::info!(
        "serving rating set from {} on {addr}",
        config.rating_dir.display()
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServiceError::Io(Path::new("<server>").into(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_names() {
        assert!(valid_patch_name("0123abcd-rot90.png"));
        assert!(!valid_patch_name("../secret.png"));
        assert!(!valid_patch_name("a.jpg"));
        assert!(!valid_patch_name(".png"));
    }

    #[test]
    fn bearer_check() {
        let mut h = HeaderMap::new();
        assert!(!authorized(&h, "tok"));
        h.insert(
            header::AUTHORIZATION,
            HeaderValue::from_static("Bearer tok"),
        );
        assert!(authorized(&h, "tok"));
        assert!(!authorized(&h, "tok2"));
    }
}
