//! Chat-completions client for remote multimodal models.
//!
//! Request body (keys are emitted in sorted order, so bodies are
//! byte-stable):
//!
//! ```json
//! {
//!   "messages": [
//!     {"content": [{"text": "...", "type": "text"}], "role": "system"},
//!     {"content": [
//!        {"image_url": {"url": "data:image/png;base64,..."}, "type": "image_url"},
//!        {"input_audio": {"data": "<base64 wav>", "format": "wav"}, "type": "input_audio"},
//!        {"text": "...", "type": "text"}
//!      ], "role": "user"}
//!   ],
//!   "model": "...",
//!   "temperature": 0.0
//! }
//! ```

use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{assemble_prompt, ContentPart, PromptBundle, PromptTemplate, Role};
use super::{PolicyBackend, PolicyError, PolicyMode, PolicyQuery, Prediction};
use crate::action::{parse_action, ActionText};

pub const DEFAULT_TOKEN_ENV: &str = "SPEECHUI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub endpoint_path: String,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    /// Environment variable holding the bearer token.
    pub token_env: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            endpoint_path: "/v1/chat/completions".into(),
            model_name: "default".into(),
            timeout_secs: 120.0,
            max_retries: 3,
            temperature: 0.0,
            backoff_base_ms: 500,
            max_in_flight: 4,
            token_env: DEFAULT_TOKEN_ENV.into(),
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(format!("timeout must be > 0, got {}", self.timeout_secs));
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be >= 1".into());
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), self.endpoint_path)
    }
}

fn read_b64(path: &Path) -> Result<String, PolicyError> {
    let bytes = std::fs::read(path).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BASE64.encode(bytes))
}

fn image_mime(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

fn encode_part(part: &ContentPart) -> Result<Value, PolicyError> {
    Ok(match part {
        ContentPart::Text { text } | ContentPart::Instruction { text } => json!({"type": "text", "text": text}),
        ContentPart::Image { path } => json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{}", image_mime(path), read_b64(path)?)},
        }),
        ContentPart::Audio { path } => json!({
            "type": "input_audio",
            "input_audio": {"data": read_b64(path)?, "format": "wav"},
        }),
    })
}

/// Serialize a prompt into the request body sent by [`remote_call`].
pub fn request_body(bundle: &PromptBundle, cfg: &RemoteConfig) -> Result<String, PolicyError> {
    let mut messages = vec![json!({
        "role": "system",
        "content": [{"type": "text", "text": bundle.system_text}],
    })];
    for turn in &bundle.turns {
        let content = turn.parts.iter().map(encode_part).collect::<Result<Vec<_>, _>>()?;
        let role = match turn.role {
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        messages.push(json!({"role": role, "content": content}));
    }
    let body = json!({
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "messages": messages,
    });
    Ok(body.to_string())
}

/// First text of the first choice in a chat-completions reply.
pub fn reply_text(body: &str) -> Result<String, PolicyError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| PolicyError::BackendUnavailable(format!("reply is not JSON: {e}")))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => parts.iter().find_map(|p| p["text"].as_str().map(str::to_string)),
        _ => None,
    };
    text.ok_or_else(|| PolicyError::BackendUnavailable(format!("reply has no message text: {body}")))
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(PolicyError),
}

fn attempt(agent: &ureq::Agent, url: &str, token: Option<&str>, body: &str) -> Attempt {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    match req.send(body) {
        Ok(mut resp) => {
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            match status {
                200..=299 => Attempt::Done(text),
                400..=499 => Attempt::Fatal(PolicyError::BackendRejected { status, body: text }),
                _ => Attempt::Retry(format!("HTTP {status}: {text}")),
            }
        }
        Err(e) => Attempt::Retry(e.to_string()),
    }
}

fn agent_for(cfg: &RemoteConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post_with_retry(agent: &ureq::Agent, cfg: &RemoteConfig, token: Option<&str>, body: &str) -> Result<String, PolicyError> {
    let url = cfg.url();
    let mut last = String::new();
    for n in 0..=cfg.max_retries {
        if n > 0 {
            let delay = cfg.backoff_base_ms.saturating_mul(1u64 << (n - 1).min(16)).min(30_000);
            std::thread::sleep(Duration::from_millis(delay));
        }
        match attempt(agent, &url, token, body) {
            Attempt::Done(text) => return Ok(text),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(why) => last = why,
        }
    }
    Err(PolicyError::BackendUnavailable(format!(
        "{} failed after {} attempt(s): {last}",
        url,
        cfg.max_retries + 1
    )))
}

/// One chat-completion round trip with retry on transport errors and 5xx.
/// 4xx replies fail immediately.
pub fn remote_call(bundle: &PromptBundle, cfg: &RemoteConfig) -> Result<ActionText, PolicyError> {
    let token = std::env::var(&cfg.token_env).ok();
    let body = request_body(bundle, cfg)?;
    let reply = post_with_retry(&agent_for(cfg), cfg, token.as_deref(), &body)?;
    let text = reply_text(&reply)?;
    ActionText::new(text.clone()).map_err(|source| PolicyError::MalformedAction { raw: text, source })
}

struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Policy backend served by a remote chat-completions endpoint.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    token: Option<String>,
    grounding: PromptTemplate,
    planning: PromptTemplate,
    in_flight: InFlight,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, String> {
        cfg.validate()?;
        let token = std::env::var(&cfg.token_env).ok();
        Ok(Self {
            agent: agent_for(&cfg),
            token,
            grounding: PromptTemplate::default_for(PolicyMode::Grounding),
            planning: PromptTemplate::default_for(PolicyMode::Planning),
            in_flight: InFlight {
                active: Mutex::new(0),
                freed: Condvar::new(),
                cap: cfg.max_in_flight,
            },
            cfg,
        })
    }

    pub fn with_templates(mut self, grounding: PromptTemplate, planning: PromptTemplate) -> Self {
        self.grounding = grounding;
        self.planning = planning;
        self
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }
}

impl PolicyBackend for RemoteBackend {
    fn predict(&self, query: &PolicyQuery<'_>) -> Result<Prediction, PolicyError> {
        let template = match query.mode {
            PolicyMode::Grounding => &self.grounding,
            PolicyMode::Planning => &self.planning,
        };
        let bundle = assemble_prompt(query.instruction, query.current, query.history, query.mode, template)?;
        let body = request_body(&bundle, &self.cfg)?;
        let reply = {
            let _slot = self.in_flight.acquire();
            post_with_retry(&self.agent, &self.cfg, self.token.as_deref(), &body)?
        };
        let text = reply_text(&reply)?;
        let raw = ActionText::new(text.clone()).map_err(|source| PolicyError::MalformedAction {
            raw: text.clone(),
            source,
        })?;
        let action = parse_action(&raw).map_err(|source| PolicyError::MalformedAction { raw: text, source })?;
        Ok(Prediction { raw, action })
    }

    fn name(&self) -> &str {
        "remote"
    }
}
