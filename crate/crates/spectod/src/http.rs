//! OpenAI-compatible chat-completions backend.
//!
//! The wire format has three roles, so six-role payloads are folded: `domain` and
//! `function` records become assistant messages and `observation` records become user
//! messages, each prefixed with a `<|role|>` line. System, user and assistant records
//! pass through unchanged.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;
use spectod_core::backend::{Backend, BackendError, GenerationRequest, GenerationResult, Usage};
use spectod_core::dialogue::{Role, TurnRecord};
use url::Url;

pub const ENDPOINT_ENV: &str = "SPECTOD_ENDPOINT";
pub const API_KEY_ENV: &str = "SPECTOD_API_KEY";
pub const MODEL_ENV: &str = "SPECTOD_MODEL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WireMessage {
    pub role: &'static str,
    pub content: String,
}

/// Folds one six-role record onto the three wire roles.
pub fn fold_record(record: &TurnRecord) -> WireMessage {
    let tagged = |role| format!("<|{role}|>\n{}", record.content);
    match record.role {
        Role::System => WireMessage {
            role: "system",
            content: record.content.clone(),
        },
        Role::User => WireMessage {
            role: "user",
            content: record.content.clone(),
        },
        Role::Assistant => WireMessage {
            role: "assistant",
            content: record.content.clone(),
        },
        Role::Domain | Role::Function => WireMessage {
            role: "assistant",
            content: tagged(record.role),
        },
        Role::Observation => WireMessage {
            role: "user",
            content: tagged(record.role),
        },
    }
}

/// Validates an endpoint and resolves it to the chat-completions URL. A base URL gets
/// `/v1/chat/completions` appended; a URL already ending in `/chat/completions` is kept.
pub fn completions_url(endpoint: &str) -> Result<Url, String> {
    let url =
        Url::parse(endpoint.trim()).map_err(|e| format!("invalid endpoint `{endpoint}`: {e}"))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(format!(
            "invalid endpoint `{endpoint}`: expected an http(s) URL with a host"
        ));
    }
    let path = url.path().trim_end_matches('/');
    if path.ends_with("/chat/completions") {
        return Ok(url);
    }
    let suffix = if path.ends_with("/v1") {
        "/chat/completions"
    } else {
        "/v1/chat/completions"
    };
    let mut out = url.clone();
    out.set_path(&format!("{path}{suffix}"));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: Url,
    pub api_key: Option<String>,
    pub model: String,
    /// Total tries per request, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Requests allowed in flight at once.
    pub concurrency: usize,
}

impl HttpConfig {
    pub fn new(url: Url) -> Self {
        HttpConfig {
            url,
            api_key: None,
            model: "default".to_string(),
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
            concurrency: 4,
        }
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    slots: Slots,
}

enum Failure {
    Retry(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::config::Config::builder()
                .http_status_as_error(false)
                .build(),
        );
        let slots = Slots {
            free: Mutex::new(config.concurrency.max(1)),
            cv: Condvar::new(),
        };
        HttpBackend {
            config,
            agent,
            slots,
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn body(&self, request: &GenerationRequest) -> String {
        let messages: Vec<WireMessage> = request.payload.messages().map(fold_record).collect();
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": request.decoding.max_new_tokens,
            "temperature": request.decoding.temperature,
        });
        if !request.decoding.stop.is_empty() {
            body["stop"] = serde_json::json!(request.decoding.stop);
        }
        body.to_string()
    }

    fn attempt(
        &self,
        body: &str,
        timeout: Duration,
        attempts: u32,
    ) -> Result<(String, Usage), Failure> {
        let mut req = self
            .agent
            .post(self.config.url.as_str())
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Retry(BackendError::Timeout { attempts }))
            }
            Err(e @ (ureq::Error::BadUri(_) | ureq::Error::Http(_))) => {
                return Err(Failure::Fatal(BackendError::InvalidRequest(e.to_string())))
            }
            Err(e) => {
                return Err(Failure::Retry(BackendError::Transport {
                    message: e.to_string(),
                    attempts,
                }))
            }
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => parse_completion(&text).map_err(Failure::Fatal),
            500..=599 => Err(Failure::Retry(BackendError::Status {
                status,
                body: text,
                attempts,
            })),
            _ => Err(Failure::Fatal(BackendError::Status {
                status,
                body: text,
                attempts,
            })),
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32 << (attempt - 1).min(16);
        self.config
            .base_delay
            .saturating_mul(factor)
            .min(self.config.max_delay)
    }
}

/// Extracts the completion text and usage from a chat-completions response body.
pub fn parse_completion(body: &str) -> Result<(String, Usage), BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))?;
    let count = |k: &str| {
        v.pointer(&format!("/usage/{k}"))
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32
    };
    Ok((
        text.to_string(),
        Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    ))
}

impl Backend for HttpBackend {
    /// Retries 5xx statuses, timeouts and transport failures with exponential backoff up
    /// to `max_attempts`; any other status fails immediately.
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let body = self.body(request);
        let _permit = self.slots.acquire();
        let started = Instant::now();
        let cap = self.config.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(&body, request.timeout, attempt) {
                Ok((text, usage)) => {
                    return Ok(GenerationResult {
                        text,
                        usage,
                        latency: started.elapsed(),
                        attempts: attempt,
                    })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) if attempt >= cap => return Err(e),
                Err(Failure::Retry(_)) => {
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}
