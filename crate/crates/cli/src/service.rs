use std::collections::HashMap;
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, put};
use axum::{Json, Router};
use mudscope_core::model::HostRef;
use mudscope_core::topology::export::{PromiseView, StackView};
use mudscope_core::{parse_mud_file, ConnectivityGraph, TopologyError, ValidationReport};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

use crate::store::Store;

const EXIT_PORT_IN_USE: u8 = 4;

struct Shared {
    graph: ConnectivityGraph,
    version: u64,
}

struct AppState {
    shared: RwLock<Shared>,
    store: Store,
}

type AppStateRef = Arc<AppState>;

#[derive(Serialize)]
struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    code: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<Box<ValidationReport>>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.to_string(), message: message.into(), path: None, report: None }
    }

    fn io(e: io::Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", e.to_string())
    }
}

impl From<TopologyError> for ApiError {
    fn from(e: TopologyError) -> Self {
        let status = match e {
            TopologyError::UnknownDevice(_) | TopologyError::UnknownNode(_) | TopologyError::UnknownPromise(_) => {
                StatusCode::NOT_FOUND
            }
            TopologyError::DuplicateProfile(_) | TopologyError::AlreadyFulfilled(_) => StatusCode::CONFLICT,
            TopologyError::EmptyHostList | TopologyError::InvalidHost(_) => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn etag(version: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{version}\"")).expect("digits are valid header text")
}

fn json_response(status: StatusCode, body: String, version: u64) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json")), (header::ETAG, etag(version))],
        body,
    )
        .into_response()
}

#[derive(Deserialize)]
struct UploadQuery {
    local: Option<bool>,
}

async fn post_mudfile(State(app): State<AppStateRef>, Query(q): Query<UploadQuery>, body: String) -> ApiResult {
    let (mut profile, report) = parse_mud_file(&body).map_err(|report| {
        let first = report.errors().next();
        let mut err = ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "ValidationFailed",
            first.map(|i| i.message.clone()).unwrap_or_else(|| "MUD file is invalid".into()),
        );
        err.path = first.map(|i| i.path.clone());
        err.report = Some(Box::new(report.clone()));
        err
    })?;
    let local = q.local.unwrap_or(true);
    profile.local = local;
    let id = profile.id.clone();
    let mut shared = app.shared.write().await;
    shared.graph.add_profile(profile)?;
    app.store.save_profile(&id, &body, local).map_err(ApiError::io)?;
    shared.version += 1;
    let body = json!({"id": id, "version": shared.version, "report": report}).to_string();
    Ok(json_response(StatusCode::CREATED, body, shared.version))
}

async fn delete_mudfile(State(app): State<AppStateRef>, Path(id): Path<String>) -> ApiResult {
    let mut shared = app.shared.write().await;
    shared.graph.remove_profile(&id)?;
    app.store.delete_profile(&id).map_err(ApiError::io)?;
    app.store.save_ledger(&shared.graph.ledger()).map_err(ApiError::io)?;
    shared.version += 1;
    let body = json!({"id": id, "version": shared.version}).to_string();
    Ok(json_response(StatusCode::OK, body, shared.version))
}

async fn get_graph(State(app): State<AppStateRef>, headers: HeaderMap) -> ApiResult {
    let shared = app.shared.read().await;
    let tag = etag(shared.version);
    let matches = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == tag || t.trim() == shared.version.to_string()));
    if matches {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, tag)]).into_response());
    }
    Ok(json_response(StatusCode::OK, shared.graph.to_json(), shared.version))
}

async fn get_promises(State(app): State<AppStateRef>) -> ApiResult {
    let shared = app.shared.read().await;
    let views: Vec<PromiseView> = shared.graph.promises().map(PromiseView).collect();
    let body = serde_json::to_string(&views).expect("promises serialize");
    Ok(json_response(StatusCode::OK, body, shared.version))
}

#[derive(Deserialize)]
struct FulfilBody {
    hosts: Vec<HostRef>,
}

async fn put_promise(State(app): State<AppStateRef>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let FulfilBody { hosts } = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", format!("expected {{\"hosts\": [...]}}: {e}")))?;
    let mut shared = app.shared.write().await;
    shared.graph.fulfill_promise(&id, &hosts)?;
    app.store.save_ledger(&shared.graph.ledger()).map_err(ApiError::io)?;
    shared.version += 1;
    let body = json!({"id": id, "version": shared.version}).to_string();
    Ok(json_response(StatusCode::OK, body, shared.version))
}

async fn get_flows(State(app): State<AppStateRef>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let param = |name: &str| {
        q.get(name)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MissingParameter", format!("query parameter {name} is required")))
    };
    let (src, dst) = (param("src")?, param("dst")?);
    let shared = app.shared.read().await;
    let stacks = shared.graph.query_flow(&src, &dst)?;
    let views: Vec<StackView> = stacks.iter().map(|s| StackView(s, false)).collect();
    let body = json!({"src": src, "dst": dst, "stacks": views}).to_string();
    Ok(json_response(StatusCode::OK, body, shared.version))
}

async fn get_report(State(app): State<AppStateRef>) -> ApiResult {
    let shared = app.shared.read().await;
    let body = serde_json::to_string(&shared.graph.redundancy_report()).expect("report serializes");
    Ok(json_response(StatusCode::OK, body, shared.version))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

fn router(app: AppStateRef, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/mudfiles", axum::routing::post(post_mudfile))
        .route("/api/mudfiles/{id}", delete(delete_mudfile))
        .route("/api/graph", get(get_graph))
        .route("/api/promises", get(get_promises))
        .route("/api/promises/{id}", put(put_promise))
        .route("/api/flows", get(get_flows))
        .route("/api/report", get(get_report))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(fallback),
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub fn run(bind: &str, port: u16, state_dir: PathBuf, static_dir: Option<PathBuf>) -> u8 {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "mudscope=info".into()),
        )
        .with_writer(io::stderr)
        .try_init();

    let store = match Store::open(state_dir.clone()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mudscope: cannot open state dir {}: {e}", state_dir.display());
            return 1;
        }
    };
    let graph = match store.load() {
        Ok(g) => g,
        Err(e) => {
            eprintln!("mudscope: cannot load state from {}: {e}", state_dir.display());
            return 1;
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("mudscope: {e}");
            return 1;
        }
    };
    runtime.block_on(async move {
        let listener = match tokio::net::TcpListener::bind((bind, port)).await {
            Ok(l) => l,
            Err(e) if e.kind() == io::ErrorKind::AddrInUse => {
                eprintln!("mudscope: {bind}:{port} is already in use");
                return EXIT_PORT_IN_USE;
            }
            Err(e) => {
                eprintln!("mudscope: cannot listen on {bind}:{port}: {e}");
                return 1;
            }
        };
        let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
        tracing::info!(state_dir = %state_dir.display(), "loaded {} device(s)", graph.profiles().count());
        let app = Arc::new(AppState { shared: RwLock::new(Shared { graph, version: 1 }), store });
        println!("mudscope listening on http://{addr}");
        let _ = io::stdout().flush();
        let served = axum::serve(listener, router(app.clone(), static_dir)).with_graceful_shutdown(shutdown_signal()).await;
        let shared = app.shared.read().await;
        if let Err(e) = app.store.save_ledger(&shared.graph.ledger()) {
            eprintln!("mudscope: cannot flush promise ledger: {e}");
            return 1;
        }
        match served {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("mudscope: {e}");
                1
            }
        }
    })
}
