#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use persona_probe::gateway::{Backend, MockBackend, ScoreRequest};
use persona_probe::{ItemBank, MockScorerSpec};

pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn ok(body: impl Into<String>) -> Reply {
        Reply {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Reply {
        Reply {
            status,
            body: body.into(),
        }
    }
}

/// A local scorer service. Each request goes to `handler(method, path, body, n)`
/// where `n` counts score requests seen so far.
pub struct FakeServer {
    pub url: String,
    pub score_calls: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl FakeServer {
    pub fn start<F>(handler: F) -> FakeServer
    where
        F: Fn(&str, &str, &str, usize) -> Reply + Send + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0").expect("bind");
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip addr"));
        let stop = Arc::new(AtomicBool::new(false));
        let score_calls = Arc::new(AtomicUsize::new(0));
        let (stop2, calls2) = (stop.clone(), score_calls.clone());
        let thread = std::thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                let Ok(Some(mut req)) = server.recv_timeout(Duration::from_millis(20)) else {
                    continue;
                };
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let method = req.method().to_string();
                let path = req.url().to_string();
                let n = if path == "/v1/score" {
                    calls2.fetch_add(1, Ordering::SeqCst)
                } else {
                    0
                };
                let reply = handler(&method, &path, &body, n);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("header");
                let response = tiny_http::Response::from_string(reply.body)
                    .with_status_code(reply.status)
                    .with_header(header);
                let _ = req.respond(response);
            }
        });
        FakeServer {
            url,
            score_calls,
            stop,
            thread: Some(thread),
        }
    }

    /// Serves a mock scorer over the wire protocol.
    pub fn mock(spec: MockScorerSpec, bank: &ItemBank) -> FakeServer {
        let backend = MockBackend::new(spec, bank);
        FakeServer::start(move |method, path, body, _| match (method, path) {
            ("GET", "/v1/info") => Reply::ok(serde_json::to_string(&backend.info().unwrap()).unwrap()),
            ("POST", "/v1/score") => {
                let request: ScoreRequest = match serde_json::from_str(body) {
                    Ok(r) => r,
                    Err(e) => return Reply::status(400, format!("{{\"error\": \"{e}\"}}")),
                };
                match backend.score(&request) {
                    Ok(resp) => Reply::ok(serde_json::to_string(&resp).unwrap()),
                    Err(e) => Reply::status(400, format!("{{\"error\": \"{e}\"}}")),
                }
            }
            _ => Reply::status(404, "{}"),
        })
    }

    pub fn calls(&self) -> usize {
        self.score_calls.load(Ordering::SeqCst)
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub const INFO_V1: &str = r#"{"model_id": "fake-1", "max_tokens": 512, "protocol_version": "1"}"#;

pub fn info_or(path: &str, score: impl FnOnce() -> Reply) -> Reply {
    if path == "/v1/info" {
        Reply::ok(INFO_V1)
    } else {
        score()
    }
}

pub mod oracle;
