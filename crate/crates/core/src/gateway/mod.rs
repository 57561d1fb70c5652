//! Backend-agnostic multimodal chat sessions.
//!
//! A [`ContextSession`] holds an append-only message history, the image
//! blobs it references and running token totals. [`Gateway`] sends messages
//! for a session to one [`Backend`], retrying transient failures with
//! exponential backoff under a per-backend rate limit. Backends are the
//! local [`MockBackend`] and two remote chat adapters.

mod backend;
mod estimate;
mod mock;
pub mod network;
mod remote;
mod session;

use std::ops::{Add, AddAssign};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::oracle::PoseEvidence;

pub use backend::{
    AttemptRecord, Backend, BackendConfig, BackendKind, BackendReply, ChatRequest, Gateway, RequestLog,
    RetryPolicy,
};
pub use estimate::{estimate_tokens, ImageTokenFormula, TokenEstimator};
pub use mock::{MockBackend, MockConfig};
pub use remote::{
    HttpRequest, HttpResponse, RemoteAdapter, ReqwestTransport, ScriptedTransport, Transport, TransportError,
};
pub use session::{load_blobs, read_log, write_log, ContextSession, LogRecord, Phase, SessionState, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One piece of message content. Images are referenced by content id; the
/// bytes live in the session's blob store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text {
        text: String,
    },
    Image {
        content_id: String,
        media_type: String,
        width: u32,
        height: u32,
    },
}

impl Part {
    pub fn text(t: impl Into<String>) -> Part {
        Part::Text { text: t.into() }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Part::Text { text } => Some(text),
            Part::Image { .. } => None,
        }
    }
}

/// What a turn is for. Carried with the message for logging and for the
/// local mock; remote adapters never transmit it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    System,
    Example,
    Correction,
    Query,
    #[default]
    Reply,
    Other,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MessageMeta {
    pub turn: TurnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
    /// Pose evidence for the local oracle backend. Never serialized.
    #[serde(skip)]
    pub evidence: Option<Arc<PoseEvidence>>,
}

impl PartialEq for MessageMeta {
    fn eq(&self, other: &Self) -> bool {
        self.turn == other.turn && self.sample == other.sample
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
    #[serde(default)]
    pub meta: MessageMeta,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![Part::text(text)],
            meta: MessageMeta { turn: TurnKind::System, ..Default::default() },
        }
    }

    pub fn user(parts: Vec<Part>, turn: TurnKind) -> Self {
        Self { role: Role::User, parts, meta: MessageMeta { turn, ..Default::default() } }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            parts: vec![Part::text(text)],
            meta: MessageMeta { turn: TurnKind::Reply, ..Default::default() },
        }
    }

    pub fn with_sample(mut self, key: impl Into<String>) -> Self {
        self.meta.sample = Some(key.into());
        self
    }

    pub fn with_evidence(mut self, evidence: Arc<PoseEvidence>) -> Self {
        self.meta.evidence = Some(evidence);
        self
    }

    /// All text parts joined with newlines.
    pub fn text(&self) -> String {
        self.parts.iter().filter_map(Part::as_text).collect::<Vec<_>>().join("\n")
    }
}

/// Immutable image payload addressed by the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub content_id: String,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
    pub bytes: Arc<Vec<u8>>,
}

impl Blob {
    pub fn new(media_type: impl Into<String>, width: u32, height: u32, bytes: Vec<u8>) -> Self {
        Self {
            content_id: content_id(&bytes),
            media_type: media_type.into(),
            width,
            height,
            bytes: Arc::new(bytes),
        }
    }

    pub fn png(width: u32, height: u32, bytes: Vec<u8>) -> Self {
        Self::new("image/png", width, height, bytes)
    }

    pub fn part(&self) -> Part {
        Part::Image {
            content_id: self.content_id.clone(),
            media_type: self.media_type.clone(),
            width: self.width,
            height: self.height,
        }
    }
}

pub fn content_id(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// Token and time accounting for one call or a running total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Seconds.
    pub wall_time: f64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64, wall_time: f64) -> Self {
        Self { input_tokens, output_tokens, wall_time }
    }

    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
            wall_time: self.wall_time + rhs.wall_time,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> TokenUsage {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend {backend} rate limited after {attempts} attempts")]
    RateLimited { backend: String, attempts: u32 },
    #[error("authentication failed for {backend}: {message}")]
    AuthError { backend: String, message: String },
    #[error("transport error talking to {backend}: {message}")]
    TransportError { backend: String, message: String, transient: bool },
    #[error("backend {backend} refused the request: {reason}")]
    BackendRefusal { backend: String, reason: String },
    #[error("session is aborted")]
    SessionAborted,
    #[error("session is not learned (state {0})")]
    NotLearned(String),
    #[error("unknown blob {0}")]
    MissingBlob(String),
    #[error("malformed backend response from {backend}: {message}")]
    BadResponse { backend: String, message: String },
    #[error("session log i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log format error: {0}")]
    Format(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::RateLimited { .. } => true,
            GatewayError::TransportError { transient, .. } => *transient,
            _ => false,
        }
    }
}
