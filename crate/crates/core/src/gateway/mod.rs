//! Uniform access to multimodal chat models.

mod http;
mod ratelimit;
mod scripted;
mod transcript;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::HttpChatBackend;
pub use ratelimit::TokenBucket;
pub use scripted::{text_key, turn_key, Script, ScriptEntry, ScriptedBackend};
pub use transcript::{record_transcript, TranscriptId, TranscriptRecord, TranscriptSink, TurnRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("backend request timed out")]
    BackendTimeout,
    #[error("backend rate limited the request after all retries")]
    RateLimited,
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("scripted backend has no response left")]
    ScriptExhausted,
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),
    #[error("backend HTTP error: {0}")]
    Http(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transcript sink unavailable: {0}")]
    SinkUnavailable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

/// PNG bytes attached to a turn.
#[derive(Clone, PartialEq, Eq)]
pub struct PngImage(pub Arc<[u8]>);

impl PngImage {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self(bytes.into())
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    /// Lowercase hex SHA-256 of the PNG bytes.
    pub fn digest(&self) -> String {
        sha256_hex(&self.0)
    }
}

impl std::fmt::Debug for PngImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PngImage({} bytes)", self.0.len())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub images: Vec<PngImage>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Conversation {
    pub system: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            turns: Vec::new(),
        }
    }

    pub fn user(mut self, text: impl Into<String>, images: Vec<PngImage>) -> Self {
        self.turns.push(Turn {
            role: Role::User,
            text: text.into(),
            images,
        });
        self
    }

    pub fn assistant(mut self, text: impl Into<String>) -> Self {
        self.turns.push(Turn {
            role: Role::Assistant,
            text: text.into(),
            images: Vec::new(),
        });
        self
    }

    /// First turn is from the user and roles alternate.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.turns.is_empty() {
            return Err(GatewayError::InvalidConversation("no turns".into()));
        }
        for (i, t) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if t.role != expected {
                return Err(GatewayError::InvalidConversation(format!("turn {i} should be {expected:?}")));
            }
        }
        Ok(())
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.text.as_str())
    }

    /// Concatenates all user turns into one, dropping assistant turns; for
    /// models that only accept a single turn.
    pub fn merged(&self) -> Conversation {
        let users: Vec<&Turn> = self.turns.iter().filter(|t| t.role == Role::User).collect();
        let text = users.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join("\n\n");
        let images = users.iter().flat_map(|t| t.images.iter().cloned()).collect();
        Conversation::new(self.system.clone()).user(text, images)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpChat,
    #[default]
    Scripted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(with = "duration_ms")]
    pub request_timeout: Duration,
    pub max_retries: u32,
    #[serde(with = "duration_ms_vec")]
    pub retry_backoff: Vec<Duration>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Send every conversation as one merged user turn.
    pub merge_turns: bool,
    /// Images whose longest side exceeds this are downscaled before sending.
    pub max_image_side: u32,
    pub max_concurrency: usize,
    /// Token-bucket refill rate; `None` disables rate limiting.
    pub requests_per_second: Option<f64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint_url: String::new(),
            model_name: String::new(),
            temperature: 0.0,
            max_output_tokens: 1024,
            request_timeout: Duration::from_secs(120),
            max_retries: 3,
            retry_backoff: vec![Duration::from_secs(1), Duration::from_secs(4), Duration::from_secs(16)],
            api_key_env: "OPENAI_API_KEY".into(),
            merge_turns: false,
            max_image_side: 2048,
            max_concurrency: 4,
            requests_per_second: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(GatewayError::Config("temperature must be >= 0".into()));
        }
        if self.kind == BackendKind::HttpChat && (self.endpoint_url.trim().is_empty() || self.model_name.trim().is_empty()) {
            return Err(GatewayError::Config("http-chat requires endpoint_url and model_name".into()));
        }
        Ok(())
    }

    pub(crate) fn backoff(&self, attempt: u32) -> Duration {
        match self.retry_backoff.as_slice() {
            [] => Duration::ZERO,
            s => s[(attempt as usize).min(s.len() - 1)],
        }
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

mod duration_ms_vec {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &[Duration], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(d.iter().map(|d| d.as_millis() as u64))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Duration>, D::Error> {
        Ok(Vec::<u64>::deserialize(d)?.into_iter().map(Duration::from_millis).collect())
    }
}

#[async_trait]
pub trait ModelBackend: Send + Sync {
    async fn complete(&self, conv: &Conversation) -> Result<String, GatewayError>;
}

/// A completed request and, when a sink is attached, its transcript id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub transcript: Option<TranscriptId>,
}

/// Backend plus optional transcript recording and turn merging.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    sink: Option<Arc<TranscriptSink>>,
    merge_turns: bool,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self {
            backend,
            sink: None,
            merge_turns: false,
        }
    }

    pub fn with_sink(mut self, sink: Arc<TranscriptSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn with_merge_turns(mut self, merge: bool) -> Self {
        self.merge_turns = merge;
        self
    }

    pub fn merge_turns(&self) -> bool {
        self.merge_turns
    }

    pub fn sink(&self) -> Option<&Arc<TranscriptSink>> {
        self.sink.as_ref()
    }

    pub async fn complete(&self, conv: &Conversation) -> Result<Completion, GatewayError> {
        conv.validate()?;
        let sent = if self.merge_turns { conv.merged() } else { conv.clone() };
        let started = chrono::Utc::now();
        let text = self.backend.complete(&sent).await?;
        let transcript = match &self.sink {
            Some(sink) => Some(sink.record(&sent, &text, started).await?),
            None => None,
        };
        Ok(Completion { text, transcript })
    }
}

/// Builds the backend described by `cfg`; `script` is required for the scripted kind.
pub fn backend_from_config(cfg: &BackendConfig, script: Option<Script>) -> Result<Arc<dyn ModelBackend>, GatewayError> {
    cfg.validate()?;
    match cfg.kind {
        BackendKind::HttpChat => Ok(Arc::new(HttpChatBackend::new(cfg.clone())?)),
        BackendKind::Scripted => {
            let script = script.ok_or_else(|| GatewayError::Config("scripted backend needs a script".into()))?;
            Ok(Arc::new(ScriptedBackend::new(script)))
        }
    }
}

/// One-shot completion without transcript recording.
pub async fn complete(conv: &Conversation, backend: &dyn ModelBackend) -> Result<String, GatewayError> {
    conv.validate()?;
    backend.complete(conv).await
}
