//! Read-only HTTP API over one loaded model and dataset.
//!
//! * `GET /api/meta`
//! * `GET /api/sample/{id}`: standardized original, components `xhat_i`,
//!   fitted σ, reconstruction and the standardization stats
//! * `POST /api/synth {sample, sigma}`: `{image, scale, offset}`
//! * `GET /`: the studio bundle from `--static-dir`, or a placeholder page
//!
//! Errors are `{"error": "..."}` with 400 for malformed requests and 404 for
//! unknown samples or routes.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use decompnet::data::SCHEMA_VERSION;
use decompnet::{Dataset, DecomposerModel};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::error::{CliError, CliResult};
use crate::studio;

pub struct AppState {
    pub model: DecomposerModel,
    pub dataset: Dataset,
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(model: DecomposerModel, dataset: Dataset, static_dir: Option<PathBuf>) -> CliResult<Arc<Self>> {
        studio::check_compatible(&model, &dataset)?;
        if let Some(dir) = &static_dir {
            if !dir.is_dir() {
                return Err(CliError::usage(format!("static dir {} does not exist", dir.display())));
            }
        }
        Ok(Arc::new(AppState {
            model,
            dataset,
            static_dir,
        }))
    }
}

pub struct ApiError(StatusCode, String);

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        let status = match e.kind {
            "not_found" => StatusCode::NOT_FOUND,
            "numeric" | "divergence" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/sample/{id}", get(sample))
        .route("/api/synth", post(synth))
        .route("/api/{*rest}", any(not_found))
        .method_not_allowed_fallback(method_not_allowed);
    let app = match &state.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)).fallback(not_found),
    };
    app.with_state(state)
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such route".into())
}

async fn method_not_allowed() -> ApiError {
    ApiError(StatusCode::METHOD_NOT_ALLOWED, "method not allowed".into())
}

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER)
}

fn shape_json(ds: &Dataset) -> Value {
    let (h, w) = studio::render_shape(ds);
    json!([h, w])
}

async fn meta(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "n_branches": s.model.n_branches(),
        "d": s.dataset.dim,
        "image_shape": shape_json(&s.dataset),
        "n_samples": s.dataset.len(),
        "schema_version": SCHEMA_VERSION,
    }))
}

fn parse_id(raw: &str) -> Result<usize, ApiError> {
    raw.parse()
        .map_err(|_| ApiError(StatusCode::BAD_REQUEST, format!("sample id {raw:?} is not a nonnegative integer")))
}

async fn sample(State(s): State<Arc<AppState>>, Path(raw): Path<String>) -> ApiResult {
    let id = parse_id(&raw)?;
    let dec = studio::decompose_sample(&s.model, &s.dataset, id)?;
    let original = studio::sample(&s.dataset, id)?;
    Ok(Json(json!({
        "sample": id,
        "original": original,
        "components": dec.components,
        "sigma": dec.sigma.0,
        "reconstruction": dec.reconstruction,
        "loss": dec.loss,
        "stats": {
            "mu": s.dataset.standardization.mean,
            "s": s.dataset.standardization.scale,
        },
        "image_shape": shape_json(&s.dataset),
    })))
}

#[derive(Deserialize)]
struct SynthRequest {
    sample: usize,
    sigma: Vec<f64>,
}

async fn synth(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: SynthRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    studio::sample(&s.dataset, req.sample)?;
    studio::validate_sigma(&req.sigma, s.model.n_branches())?;
    let (_, img) = studio::synthesize(&s.model, &s.dataset, req.sample, &req.sigma)?;
    Ok(Json(json!({
        "image": img.pixels,
        "scale": img.scale,
        "offset": img.offset,
    })))
}

/// Binds `host:port` and serves until interrupted. Prints
/// `{"listening": "host:port"}` on stdout once bound.
pub fn run(state: Arc<AppState>, host: &str, port: u16) -> CliResult<()> {
    let listener = std::net::TcpListener::bind((host, port))
        .map_err(|e| CliError::io(format!("cannot bind {host}:{port}"), e))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| CliError::io("listener", e))?;
    let addr = listener.local_addr().map_err(|e| CliError::io("listener", e))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(|e| CliError::io("listener", e))?;
        println!("{}", json!({ "listening": addr.to_string() }));
        std::io::stdout().flush().ok();
        log::info!("serving on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await
            .map_err(|e| CliError::io("server", e))
    })
}

const PLACEHOLDER: &str = r#"<!doctype html>
<html>
<head><meta charset="utf-8"><title>decompnet</title></head>
<body>
<h1>decompnet</h1>
<p>No studio bundle configured. Start with <code>--static-dir</code> to serve one.</p>
<ul>
<li><a href="/api/meta">GET /api/meta</a></li>
<li><a href="/api/sample/0">GET /api/sample/0</a></li>
<li>POST /api/synth {"sample": 0, "sigma": [...]}</li>
</ul>
</body>
</html>
"#;
