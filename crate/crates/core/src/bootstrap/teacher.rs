//! The model client boundary: HTTP chat completions, transcript
//! record/replay, and retry handling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl::{self, JsonlError};

pub const TEACHER_URL_ENV: &str = "COTSQL_TEACHER_URL";
pub const TEACHER_API_KEY_ENV: &str = "COTSQL_TEACHER_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingMode {
    Manual,
    Greedy,
    Sampling,
}

impl DecodingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodingMode::Manual => "manual",
            DecodingMode::Greedy => "greedy",
            DecodingMode::Sampling => "sampling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub mode: DecodingMode,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodingParams {
    pub fn greedy() -> Self {
        Self {
            mode: DecodingMode::Greedy,
            temperature: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRequest {
    pub model: String,
    pub prompt: String,
    pub decoding: DecodingParams,
    /// Not sent to the endpoint; lets offline clients key their output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
}

impl TeacherRequest {
    /// Transcript key: depends on model, decoding and prompt only.
    pub fn key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0]);
        h.update(self.decoding.mode.as_str().as_bytes());
        h.update([0]);
        h.update(self.decoding.temperature.to_bits().to_le_bytes());
        h.update(self.decoding.seed.map_or(u64::MAX, |s| s).to_le_bytes());
        h.update([0]);
        h.update(self.prompt.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

impl TeacherResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: Some("stop".into()),
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TeacherError {
    /// Network failures, 429 and 5xx. Retried.
    #[error("transport error: {0}")]
    Transport(String),
    /// The endpoint refused the request. Not retried.
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("empty completion")]
    EmptyCompletion,
    #[error("no recorded response for request {0}")]
    NotRecorded(String),
    #[error("transcript: {0}")]
    Transcript(String),
}

impl TeacherError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TeacherError::Transport(_) | TeacherError::EmptyCompletion)
    }
}

pub trait TeacherClient: Send + Sync {
    fn complete(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError>;
}

impl<T: TeacherClient + ?Sized> TeacherClient for Box<T> {
    fn complete(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay_ms: 500,
        }
    }
}

/// Calls `client`, retrying retryable failures with exponential backoff.
pub fn complete_with_retry(
    client: &dyn TeacherClient,
    request: &TeacherRequest,
    policy: RetryPolicy,
) -> Result<TeacherResponse, TeacherError> {
    let mut attempt = 0;
    loop {
        let result = client.complete(request).and_then(|r| {
            if r.text.trim().is_empty() {
                Err(TeacherError::EmptyCompletion)
            } else {
                Ok(r)
            }
        });
        match result {
            Err(e) if e.is_retryable() && attempt < policy.retries => {
                let delay = policy.base_delay_ms.saturating_mul(1 << attempt.min(16));
                tracing::warn!(attempt = attempt + 1, error = %e, "teacher call failed, retrying");
                std::thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// OpenAI-style chat-completions endpoint.
pub struct HttpTeacher {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTeacher {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// Reads the endpoint and optional key from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, TeacherError> {
        let endpoint = std::env::var(TEACHER_URL_ENV)
            .map_err(|_| TeacherError::Rejected(format!("{TEACHER_URL_ENV} is not set")))?;
        let key = std::env::var(TEACHER_API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self::new(endpoint, key, timeout))
    }

    pub fn request_body(request: &TeacherRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.decoding.temperature,
        });
        if let Some(seed) = request.decoding.seed {
            body["seed"] = seed.into();
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl TeacherClient for HttpTeacher {
    fn complete(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = match req.send_json(Self::request_body(request)) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", body.chars().take(300).collect::<String>());
                return Err(if code == 429 || code >= 500 {
                    TeacherError::Transport(msg)
                } else {
                    TeacherError::Rejected(msg)
                });
            }
            Err(e) => return Err(TeacherError::Transport(e.to_string())),
        };
        let parsed: ChatResponse = resp
            .into_json()
            .map_err(|e| TeacherError::Transport(format!("invalid response body: {e}")))?;
        let choice = parsed.choices.into_iter().next().ok_or(TeacherError::EmptyCompletion)?;
        Ok(TeacherResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason,
            usage: parsed.usage,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request: TeacherRequest,
    pub response: TeacherResponse,
}

/// Wraps a client and appends every successful exchange to a JSONL transcript.
pub struct RecordingTeacher<C> {
    inner: C,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<C: TeacherClient> RecordingTeacher<C> {
    pub fn new(inner: C, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl<C: TeacherClient> TeacherClient for RecordingTeacher<C> {
    fn complete(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
        let response = self.inner.complete(request)?;
        let entry = TranscriptEntry {
            key: request.key(),
            request: request.clone(),
            response: response.clone(),
        };
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        jsonl::append(&self.path, &[entry]).map_err(|e| TeacherError::Transcript(e.to_string()))?;
        Ok(response)
    }
}

/// Answers from a recorded transcript. The last entry wins for repeated keys.
pub struct ReplayTeacher {
    entries: HashMap<String, TeacherResponse>,
}

impl ReplayTeacher {
    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        let entries: Vec<TranscriptEntry> = jsonl::read_all(path)?;
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.key, e.response)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl TeacherClient for ReplayTeacher {
    fn complete(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
        let key = request.key();
        self.entries
            .get(&key)
            .cloned()
            .ok_or(TeacherError::NotRecorded(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
        error: TeacherError,
    }

    impl TeacherClient for Flaky {
        fn complete(&self, _: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(self.error.clone())
            } else {
                Ok(TeacherResponse::text("ok"))
            }
        }
    }

    fn request(prompt: &str) -> TeacherRequest {
        TeacherRequest {
            model: "m".into(),
            prompt: prompt.into(),
            decoding: DecodingParams::greedy(),
            instance_id: None,
        }
    }

    const FAST: RetryPolicy = RetryPolicy {
        retries: 3,
        base_delay_ms: 0,
    };

    #[test]
    fn transport_errors_are_retried_up_to_the_bound() {
        let ok_after_3 = Flaky {
            fail_first: 3,
            calls: AtomicU32::new(0),
            error: TeacherError::Transport("down".into()),
        };
        assert_eq!(complete_with_retry(&ok_after_3, &request("p"), FAST).unwrap().text, "ok");

        let never = Flaky {
            fail_first: 10,
            calls: AtomicU32::new(0),
            error: TeacherError::Transport("down".into()),
        };
        assert!(complete_with_retry(&never, &request("p"), FAST).is_err());
        assert_eq!(never.calls.load(Ordering::SeqCst), 4);

        let rejected = Flaky {
            fail_first: 10,
            calls: AtomicU32::new(0),
            error: TeacherError::Rejected("400".into()),
        };
        assert!(complete_with_retry(&rejected, &request("p"), FAST).is_err());
        assert_eq!(rejected.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let rec = RecordingTeacher::new(
            Flaky {
                fail_first: 0,
                calls: AtomicU32::new(0),
                error: TeacherError::EmptyCompletion,
            },
            &path,
        );
        rec.complete(&request("a")).unwrap();
        rec.complete(&request("b")).unwrap();
        let replay = ReplayTeacher::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete(&request("b")).unwrap().text, "ok");
        assert!(matches!(replay.complete(&request("c")), Err(TeacherError::NotRecorded(_))));
    }

    #[test]
    fn key_depends_on_decoding() {
        let a = request("p");
        let mut b = request("p");
        b.decoding = DecodingParams {
            mode: DecodingMode::Sampling,
            temperature: 0.7,
            seed: Some(2),
        };
        assert_ne!(a.key(), b.key());
        let mut c = a.clone();
        c.instance_id = Some("x".into());
        assert_eq!(a.key(), c.key());
    }

    #[test]
    fn http_body_shape() {
        let mut r = request("hello");
        r.decoding.seed = Some(7);
        let body = HttpTeacher::request_body(&r);
        assert_eq!(body["messages"][0]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["seed"], 7);
    }
}
