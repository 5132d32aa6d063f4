use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use webground_core::gateway::{BackendConfig, BackendKind, Conversation, GatewayError, HttpChatBackend, ModelBackend};

#[derive(Clone, Default)]
struct Stub {
    /// Status codes returned before the canned answer, in order.
    failures: Arc<Mutex<Vec<u16>>>,
    delay: Duration,
    hits: Arc<AtomicUsize>,
    last_body: Arc<Mutex<Option<Value>>>,
}

async fn chat(State(s): State<Stub>, Json(body): Json<Value>) -> Response {
    s.hits.fetch_add(1, Ordering::SeqCst);
    *s.last_body.lock().unwrap() = Some(body);
    tokio::time::sleep(s.delay).await;
    let fail = {
        let mut f = s.failures.lock().unwrap();
        (!f.is_empty()).then(|| f.remove(0))
    };
    if let Some(code) = fail {
        return StatusCode::from_u16(code).unwrap().into_response();
    }
    Json(json!({"choices": [{"message": {"role": "assistant", "content": "ELEMENT: A\nACTION: CLICK\nVALUE: None"}}]})).into_response()
}

async fn start(stub: Stub) -> SocketAddr {
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(stub);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

fn config(addr: SocketAddr) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::HttpChat,
        endpoint_url: format!("http://{addr}/v1/chat/completions"),
        model_name: "stub-model".into(),
        retry_backoff: vec![Duration::from_millis(1)],
        api_key_env: "WEBGROUND_TEST_UNSET_KEY".into(),
        ..Default::default()
    }
}

fn conv() -> Conversation {
    Conversation::new("system").user("Which element?", vec![])
}

#[tokio::test]
async fn canned_body_is_returned() {
    let stub = Stub::default();
    let addr = start(stub.clone()).await;
    let backend = HttpChatBackend::new(config(addr)).unwrap();
    assert_eq!(backend.complete(&conv()).await.unwrap(), "ELEMENT: A\nACTION: CLICK\nVALUE: None");
    let body = stub.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["messages"][1]["content"][0]["text"], "Which element?");
}

#[tokio::test]
async fn slow_backend_times_out() {
    let stub = Stub {
        delay: Duration::from_millis(100),
        ..Default::default()
    };
    let addr = start(stub.clone()).await;
    let cfg = BackendConfig {
        request_timeout: Duration::from_millis(1),
        max_retries: 1,
        ..config(addr)
    };
    let backend = HttpChatBackend::new(cfg).unwrap();
    assert_eq!(backend.complete(&conv()).await, Err(GatewayError::BackendTimeout));
}

#[tokio::test]
async fn server_errors_and_throttling_are_retried() {
    let stub = Stub {
        failures: Arc::new(Mutex::new(vec![500, 429])),
        ..Default::default()
    };
    let addr = start(stub.clone()).await;
    let backend = HttpChatBackend::new(config(addr)).unwrap();
    assert!(backend.complete(&conv()).await.is_ok());
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn persistent_throttling_gives_up() {
    let stub = Stub {
        failures: Arc::new(Mutex::new(vec![429; 10])),
        ..Default::default()
    };
    let addr = start(stub.clone()).await;
    let cfg = BackendConfig { max_retries: 2, ..config(addr) };
    let backend = HttpChatBackend::new(cfg).unwrap();
    assert_eq!(backend.complete(&conv()).await, Err(GatewayError::RateLimited));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let stub = Stub {
        failures: Arc::new(Mutex::new(vec![401])),
        ..Default::default()
    };
    let addr = start(stub.clone()).await;
    let backend = HttpChatBackend::new(config(addr)).unwrap();
    assert!(matches!(backend.complete(&conv()).await, Err(GatewayError::Http(m)) if m.contains("401")));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}
