//! Scripted chat-completions server used as a test double for remote
//! backends.
//!
//! Script file format:
//!
//! ```json
//! {
//!   "responses": [
//!     {"status": 500, "body": "overloaded"},
//!     {"status": 200, "content": "click(x=0.5000, y=0.5000)"}
//!   ],
//!   "repeat_last": true
//! }
//! ```
//!
//! `content` is wrapped into a chat-completion reply; `body` is sent as is.
//! After the script runs out the last entry repeats, or the server answers
//! 503 when `repeat_last` is false.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedResponse {
    #[serde(default = "ok_status")]
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

fn ok_status() -> u16 {
    200
}

impl ScriptedResponse {
    pub fn reply(content: impl Into<String>) -> Self {
        Self {
            status: 200,
            content: Some(content.into()),
            body: None,
        }
    }

    pub fn error(status: u16) -> Self {
        Self {
            status,
            content: None,
            body: Some(format!("scripted error {status}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubScript {
    pub responses: Vec<ScriptedResponse>,
    #[serde(default = "yes")]
    pub repeat_last: bool,
}

fn yes() -> bool {
    true
}

impl StubScript {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let s = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&s).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn completion_body(n: usize, content: &str) -> String {
    json!({
        "id": format!("stub-{n}"),
        "object": "chat.completion",
        "model": "stub",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    })
    .to_string()
}

/// Running stub server; shuts down on drop.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    addr: std::net::SocketAddr,
    received: Arc<Mutex<Vec<String>>>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind `addr` (use port 0 for an ephemeral port) and start serving.
    /// When `log_dir` is set every request body is also written there as
    /// `request_NNNN.json`.
    pub fn start(addr: &str, script: StubScript, log_dir: Option<PathBuf>) -> Result<Self, String> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| format!("cannot bind {addr}: {e}"))?);
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| "stub server has no IP address".to_string())?;
        if let Some(dir) = &log_dir {
            std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        }
        let received = Arc::new(Mutex::new(Vec::new()));
        let worker = {
            let server = Arc::clone(&server);
            let received = Arc::clone(&received);
            std::thread::spawn(move || serve(&server, &script, &received, log_dir.as_deref()))
        };
        Ok(Self {
            server,
            addr: local,
            received,
            worker: Some(worker),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Request bodies received so far, in arrival order.
    pub fn received(&self) -> Vec<String> {
        self.received.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Block until the server is stopped from another thread.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(server: &tiny_http::Server, script: &StubScript, received: &Mutex<Vec<String>>, log_dir: Option<&Path>) {
    for mut request in server.incoming_requests() {
        let mut body = String::new();
        let _ = request.as_reader().read_to_string(&mut body);
        let n = {
            let mut log = received.lock().unwrap_or_else(|e| e.into_inner());
            log.push(body.clone());
            log.len()
        };
        if let Some(dir) = log_dir {
            let _ = std::fs::write(dir.join(format!("request_{n:04}.json")), &body);
        }
        let entry = script.responses.get(n - 1).or(if script.repeat_last {
            script.responses.last()
        } else {
            None
        });
        let (status, text) = match entry {
            Some(r) => {
                let text = match (&r.content, &r.body) {
                    (Some(c), _) => completion_body(n, c),
                    (None, Some(b)) => b.clone(),
                    (None, None) => String::new(),
                };
                (r.status, text)
            }
            None => (503, "script exhausted".to_string()),
        };
        let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
        let response = tiny_http::Response::from_string(text)
            .with_status_code(status)
            .with_header(header);
        let _ = request.respond(response);
    }
}

