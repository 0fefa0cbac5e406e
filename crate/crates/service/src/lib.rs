//! HTTP facade over steered generation and inference.
//!
//! One backend per process. Request bodies are [`JobRecord`]s and response
//! bodies are [`ResultRecord`]s, produced by the same runners the CLI uses.
//! Elapsed time is reported in the `x-cos-elapsed-ms` header so bodies stay
//! byte-identical across repeated seeded requests.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;

use costeer_core::jobs::{is_backend_error, ErrorBody, JobDefaults, JobKind, JobRecord};
use costeer_core::logits::to_log_probs;
use costeer_core::remote::{top_k_report, wire};
use costeer_core::{Error, LanguageModel, Role};

pub const ELAPSED_HEADER: &str = "x-cos-elapsed-ms";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type SharedModel = Arc<dyn LanguageModel>;

#[derive(Clone)]
pub struct AppState {
    model: Arc<OnceLock<SharedModel>>,
    defaults: Arc<JobDefaults>,
    token: Option<Arc<str>>,
}

impl AppState {
    /// A state whose model arrives later through [`AppState::install`];
    /// until then every model route answers 503.
    pub fn loading(defaults: JobDefaults, token: Option<String>) -> Self {
        Self { model: Arc::new(OnceLock::new()), defaults: Arc::new(defaults), token: token.map(Into::into) }
    }

    pub fn ready(model: SharedModel, defaults: JobDefaults, token: Option<String>) -> Self {
        let s = Self::loading(defaults, token);
        s.install(model);
        s
    }

    /// Returns false if a model was already installed.
    pub fn install(&self, model: SharedModel) -> bool {
        self.model.set(model).is_ok()
    }

    pub fn model(&self) -> Option<SharedModel> {
        self.model.get().cloned()
    }
}

#[derive(Debug, Serialize)]
struct ErrorResponse {
    schema_version: u32,
    error: ErrorBody,
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_string(body) {
        Ok(s) => (status, [(header::CONTENT_TYPE, "application/json")], s).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn error_response(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = ErrorResponse {
        schema_version: costeer_core::jobs::SCHEMA_VERSION,
        error: ErrorBody { code: code.to_string(), message: message.into() },
    };
    json_response(status, &body)
}

fn core_error(err: &Error) -> Response {
    let status = if is_backend_error(err) { StatusCode::SERVICE_UNAVAILABLE } else { StatusCode::UNPROCESSABLE_ENTITY };
    let body = ErrorResponse { schema_version: costeer_core::jobs::SCHEMA_VERSION, error: ErrorBody::from_error(err) };
    json_response(status, &body)
}

fn unavailable() -> Response {
    error_response(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", "model is still loading")
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, serde_json::Error> {
    serde_json::from_slice(body)
}

fn malformed(e: serde_json::Error) -> Response {
    error_response(StatusCode::BAD_REQUEST, "malformed_body", e.to_string())
}

async fn run_job(state: AppState, kind: JobKind, body: Bytes) -> Response {
    let record: JobRecord = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return malformed(e),
    };
    let Some(model) = state.model() else {
        return unavailable();
    };
    let defaults = state.defaults.clone();
    let joined = tokio::task::spawn_blocking(move || kind.run(model.as_ref(), &record, &defaults)).await;
    match joined {
        Ok(Ok(result)) => json_response(StatusCode::OK, &result),
        Ok(Err(e)) => core_error(&e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn generate(State(s): State<AppState>, body: Bytes) -> Response {
    run_job(s, JobKind::Generate, body).await
}

async fn sweep(State(s): State<AppState>, body: Bytes) -> Response {
    run_job(s, JobKind::Sweep, body).await
}

async fn infer_lambda(State(s): State<AppState>, body: Bytes) -> Response {
    run_job(s, JobKind::Infer, body).await
}

async fn classify(State(s): State<AppState>, body: Bytes) -> Response {
    run_job(s, JobKind::Classify, body).await
}

async fn score(State(s): State<AppState>, body: Bytes) -> Response {
    run_job(s, JobKind::Score, body).await
}

fn top_logprobs_for(model: &dyn LanguageModel, req: &wire::TopLogprobsRequest) -> Result<wire::TopLogprobsResponse, Error> {
    if req.schema_version != wire::schema_version() {
        return Err(Error::InvalidSpec(format!("unsupported schema_version {}", req.schema_version)));
    }
    let prefix = match (&req.prefix_ids, &req.text) {
        (Some(ids), None) => ids.clone(),
        (None, Some(text)) => model.vocab().tokenize(text, Role::Generated)?.into_tokens(),
        (None, None) => Vec::new(),
        (Some(_), Some(_)) => return Err(Error::InvalidSpec("give prefix_ids or text, not both".into())),
    };
    let lp = to_log_probs(&model.next_token_logits(&prefix)?);
    Ok(top_k_report(lp.values(), model.vocab(), req.k)?.to_wire())
}

async fn top_logprobs(State(s): State<AppState>, body: Bytes) -> Response {
    let req: wire::TopLogprobsRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return malformed(e),
    };
    let Some(model) = s.model() else {
        return unavailable();
    };
    match tokio::task::spawn_blocking(move || top_logprobs_for(model.as_ref(), &req)).await {
        Ok(Ok(resp)) => json_response(StatusCode::OK, &resp),
        Ok(Err(e)) => core_error(&e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn vocab(State(s): State<AppState>) -> Response {
    let Some(model) = s.model() else {
        return unavailable();
    };
    let v = model.vocab();
    let fallback = v.fallback().map(|id| v.tokens()[id.index()].clone());
    json_response(
        StatusCode::OK,
        &wire::VocabResponse { schema_version: wire::schema_version(), tokens: v.tokens().to_vec(), fallback },
    )
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vocab_size: Option<usize>,
}

async fn health(State(s): State<AppState>) -> Response {
    match s.model() {
        Some(m) => json_response(
            StatusCode::OK,
            &Health { status: "ok", version: VERSION, model: Some(m.describe()), vocab_size: Some(m.vocab().len()) },
        ),
        None => json_response(
            StatusCode::SERVICE_UNAVAILABLE,
            &Health { status: "loading", version: VERSION, model: None, vocab_size: None },
        ),
    }
}

async fn require_token(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token.as_ref());
        if !ok {
            return error_response(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token");
        }
    }
    next.run(req).await
}

async fn elapsed(req: Request, next: Next) -> Response {
    let start = Instant::now();
    let mut resp = next.run(req).await;
    let ms = format!("{:.3}", start.elapsed().as_secs_f64() * 1e3);
    if let Ok(v) = HeaderValue::from_str(&ms) {
        resp.headers_mut().insert(ELAPSED_HEADER, v);
    }
    resp
}

pub fn router(state: AppState) -> Router {
    let gated = Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/sweep", post(sweep))
        .route("/v1/infer_lambda", post(infer_lambda))
        .route("/v1/classify", post(classify))
        .route("/v1/score", post(score))
        .route("/v1/top_logprobs", post(top_logprobs))
        .route("/v1/vocab", get(vocab))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/v1/health", get(health))
        .merge(gated)
        .layer(middleware::from_fn(elapsed))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(state)).await
}
