//! Local chat-completion server for tests, fixtures and offline demos.
//! Every POST, whatever its path, is answered by a responder function.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Router;
use normalign_core::scale::Choice;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, Clone, PartialEq)]
pub struct StubRequest {
    pub model: String,
    pub prompt: String,
    pub body: Value,
    /// 1-based arrival number.
    pub hit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubReply {
    pub status: u16,
    pub text: String,
    pub delay: Duration,
}

impl StubReply {
    pub fn text(text: impl Into<String>) -> StubReply {
        StubReply {
            status: 200,
            text: text.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> StubReply {
        StubReply {
            status,
            text: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn after(mut self, delay: Duration) -> StubReply {
        self.delay = delay;
        self
    }
}

pub type Responder = Arc<dyn Fn(&StubRequest) -> StubReply + Send + Sync>;

pub fn fixed(text: &str) -> Responder {
    let text = text.to_owned();
    Arc::new(move |_| StubReply::text(text.clone()))
}

/// A stand-in model: the answer is a pure function of (model, prompt), so
/// recording and replaying give the same texts on every machine. Most
/// replies pick an option in one of several surface forms; a few refuse.
pub fn scripted_reply(model: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0]);
    h.update(prompt.as_bytes());
    let h = h.finalize();
    if h[1] % 16 == 0 {
        return "I can't answer that.".to_owned();
    }
    let c = Choice::from_value(h[0] % 5).expect("in range");
    match h[2] % 4 {
        0 => format!("{}) {}", c.letter(), c.display()),
        1 => format!("{}", c.letter()),
        2 => format!(
            "**{})** {}\nMost people would see it this way.",
            c.letter(),
            c.display()
        ),
        _ => format!("Option {}", c.letter()),
    }
}

pub fn scripted() -> Responder {
    Arc::new(|req| StubReply::text(scripted_reply(&req.model, &req.prompt)))
}

#[derive(Clone)]
struct AppState {
    responder: Responder,
    hits: Arc<AtomicUsize>,
}

async fn handle(State(state): State<AppState>, body: Bytes) -> Response {
    let hit = state.hits.fetch_add(1, Ordering::SeqCst) + 1;
    let Ok(body) = serde_json::from_slice::<Value>(&body) else {
        return (StatusCode::BAD_REQUEST, "request body is not JSON").into_response();
    };
    let req = StubRequest {
        model: body["model"].as_str().unwrap_or_default().to_owned(),
        prompt: body
            .pointer("/messages/0/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned(),
        body: body.clone(),
        hit,
    };
    let reply = (state.responder)(&req);
    if !reply.delay.is_zero() {
        tokio::time::sleep(reply.delay).await;
    }
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if !status.is_success() {
        return (status, reply.text).into_response();
    }
    let payload = json!({
        "id": format!("stub-{hit}"),
        "object": "chat.completion",
        "model": req.model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": reply.text},
            "finish_reason": "stop",
        }],
    });
    (
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        payload.to_string(),
    )
        .into_response()
}

pub struct StubServer {
    addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl StubServer {
    /// Binds an ephemeral port on 127.0.0.1.
    pub async fn start(responder: Responder) -> std::io::Result<StubServer> {
        Self::bind(SocketAddr::from(([127, 0, 0, 1], 0)), responder).await
    }

    pub async fn bind(addr: SocketAddr, responder: Responder) -> std::io::Result<StubServer> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let hits = Arc::new(AtomicUsize::new(0));
        let app = Router::new().fallback(handle).with_state(AppState {
            responder,
            hits: hits.clone(),
        });
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(StubServer {
            addr,
            hits,
            shutdown: Some(tx),
            task,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Requests received so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Runs until the server task ends (it does not end on its own).
    pub async fn wait(mut self) {
        let task = std::mem::replace(&mut self.task, tokio::spawn(async {}));
        let _ = task.await;
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.abort();
    }
}
