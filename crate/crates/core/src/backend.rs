//! Text generation behind one trait, plus the deterministic gold-replay mock.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Role, TurnRecord};
use crate::prompt::{ChatPayload, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub max_new_tokens: u32,
    pub temperature: f32,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for Decoding {
    /// Greedy decoding; generation ends at the end of the assistant message.
    fn default() -> Self {
        Decoding {
            max_new_tokens: 256,
            temperature: 0.0,
            stop: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub payload: ChatPayload,
    pub decoding: Decoding,
    pub timeout: Duration,
    /// Identifies the call site, `dialogue/turn/task`; mocks key their fixtures on it.
    pub tag: String,
}

impl GenerationRequest {
    pub fn new(payload: ChatPayload, tag: String) -> Self {
        GenerationRequest {
            payload,
            decoding: Decoding::default(),
            timeout: Duration::from_secs(60),
            tag,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.decoding.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_new_tokens must be positive".into(),
            ));
        }
        if self.decoding.temperature.is_nan() || self.decoding.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Tag for a pipeline stage call.
pub fn request_tag(dialogue_id: &str, turn: usize, task: Task) -> String {
    format!("{dialogue_id}/{turn}/{}", task.tag())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
    /// Transport attempts used, 1 when the first try succeeded.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("HTTP status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("no mock fixture for `{0}`")]
    FixtureMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Anything that turns a chat payload into a completion.
pub trait Backend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for alloc::boxed::Box<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }
}

/// Replays recorded completions keyed by request tag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockBackend {
    fixtures: BTreeMap<String, String>,
    judge_score: Option<f64>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tag: impl Into<String>, completion: impl Into<String>) {
        self.fixtures.insert(tag.into(), completion.into());
    }

    /// Every judge request is answered with this score.
    pub fn with_judge_score(mut self, score: f64) -> Self {
        self.judge_score = Some(score);
        self
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let text = match (self.fixtures.get(&request.tag), self.judge_score) {
            (Some(text), _) => text.clone(),
            (None, Some(score)) if request.tag.starts_with(JUDGE_TAG_PREFIX) => {
                format!("Score: {score}")
            }
            _ => return Err(BackendError::FixtureMiss(request.tag.clone())),
        };
        Ok(GenerationResult {
            text,
            usage: Usage::default(),
            latency: Duration::ZERO,
            attempts: 1,
        })
    }
}

pub const JUDGE_TAG_PREFIX: &str = "judge/";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    #[error("no score in judge completion `{0}`")]
    Unparseable(String),
    #[error("judge score {0} outside [0, 5]")]
    OutOfRange(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// First decimal number in the completion, required to lie in `[0, 5]`.
pub fn parse_judge_score(text: &str) -> Result<f64, JudgeError> {
    let bytes = text.as_bytes();
    let start = bytes
        .iter()
        .position(u8::is_ascii_digit)
        .ok_or_else(|| JudgeError::Unparseable(text.to_string()))?;
    let mut end = start;
    let mut seen_dot = false;
    while end < bytes.len() {
        match bytes[end] {
            b'0'..=b'9' => end += 1,
            b'.' if !seen_dot && bytes.get(end + 1).is_some_and(u8::is_ascii_digit) => {
                seen_dot = true;
                end += 1;
            }
            _ => break,
        }
    }
    let score: f64 = text[start..end]
        .parse()
        .map_err(|_| JudgeError::Unparseable(text.to_string()))?;
    if !(0.0..=5.0).contains(&score) {
        return Err(JudgeError::OutOfRange(score));
    }
    Ok(score)
}

/// Asks the backend to rate one exchange against one rubric question.
pub fn judge(
    backend: &dyn Backend,
    rubric: &str,
    exchange: &str,
    tag: String,
) -> Result<f64, JudgeError> {
    let system = format!(
        "You are rating a response produced by a task-oriented dialogue system.\n{rubric}\nRate the response on a scale from 0 to 5 and answer in the form `Score: <number>`."
    );
    let payload = ChatPayload {
        system: TurnRecord::new(Role::System, system),
        history: Vec::new(),
        current: alloc::vec![TurnRecord::new(Role::User, exchange)],
    };
    let result = backend.generate(&GenerationRequest::new(payload, tag))?;
    parse_judge_score(&result.text)
}
