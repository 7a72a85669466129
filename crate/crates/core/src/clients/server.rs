//! HTTP front for [`MockBackend`], speaking both wire protocols.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use super::{ChatRequest, ClientError, MockBackend, SegmentRequest};

struct ServerState {
    backend: Arc<MockBackend>,
    /// Requests still to be refused with 429.
    throttle: AtomicUsize,
}

impl ServerState {
    fn throttled(&self) -> bool {
        self.throttle
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
    }
}

pub fn router(backend: Arc<MockBackend>) -> Router {
    router_with_throttle(backend, 0)
}

/// Like [`router`], but the first `throttle` requests get 429.
pub fn router_with_throttle(backend: Arc<MockBackend>, throttle: usize) -> Router {
    let state = Arc::new(ServerState {
        backend,
        throttle: AtomicUsize::new(throttle),
    });
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/chat/completions", post(chat))
        .route("/v1/segment", post(segment))
        .with_state(state)
}

fn error_response(err: ClientError) -> Response {
    match err {
        ClientError::UnknownFixture(digest) => (
            StatusCode::NOT_FOUND,
            Json(json!({"error": "unknown fixture", "digest": digest})),
        )
            .into_response(),
        other => (
            StatusCode::BAD_REQUEST,
            Json(json!({"error": other.to_string()})),
        )
            .into_response(),
    }
}

fn too_many() -> Response {
    (StatusCode::TOO_MANY_REQUESTS, Json(json!({"error": "throttled"}))).into_response()
}

async fn chat(State(st): State<Arc<ServerState>>, Json(req): Json<ChatRequest>) -> Response {
    if st.throttled() {
        return too_many();
    }
    match st.backend.chat(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => error_response(e),
    }
}

async fn segment(State(st): State<Arc<ServerState>>, Json(req): Json<SegmentRequest>) -> Response {
    if st.throttled() {
        return too_many();
    }
    match st.backend.segment_request(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => error_response(e),
    }
}

/// Binds `addr` and returns the bound address with the serving task.
pub async fn spawn(
    addr: SocketAddr,
    app: Router,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "mock server stopped");
        }
    });
    Ok((local, handle))
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, backend: Arc<MockBackend>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "mock agents listening");
    axum::serve(listener, router(backend))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
