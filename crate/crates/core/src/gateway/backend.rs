use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::mock::{MockBackend, MockConfig};
use super::remote::{RemoteAdapter, ReqwestTransport, Transport};
use super::{Blob, ContextSession, GatewayError, Message, Part, TokenEstimator, TokenUsage};
use super::{ImageTokenFormula, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Chat-completions style API with `image_url` parts.
    RemoteA,
    /// `generateContent` style API with inline data parts.
    RemoteB,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Seconds before the second attempt; doubles after each failure.
    pub base_backoff: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff: 1.0 }
    }
}

/// Connection settings for one backend. Holds the name of the credential
/// variable, never the credential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub id: String,
    pub kind: BackendKind,
    pub endpoint: String,
    pub model_name: String,
    pub credential_env: String,
    /// Requests per minute; 0 disables the limiter.
    pub rate_limit: u32,
    pub retry: RetryPolicy,
    pub image_token_formula: ImageTokenFormula,
    pub text_bytes_per_token: u64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub mock: MockConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::mock()
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self {
            id: "mock".into(),
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model_name: "limb-census".into(),
            credential_env: String::new(),
            rate_limit: 0,
            retry: RetryPolicy::default(),
            image_token_formula: ImageTokenFormula::default(),
            text_bytes_per_token: 4,
            max_output_tokens: 300,
            timeout_secs: 120,
            mock: MockConfig::default(),
        }
    }

    pub fn estimator(&self) -> TokenEstimator {
        TokenEstimator { image: self.image_token_formula, text_bytes_per_token: self.text_bytes_per_token }
    }
}

/// Everything a backend sees for one call.
pub struct ChatRequest<'a> {
    pub messages: &'a [Message],
    pub blobs: &'a BTreeMap<String, Blob>,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    /// Usage reported by the backend, when it reports any.
    pub usage: Option<TokenUsage>,
    /// Latency to record instead of the measured one.
    pub wall_time: Option<f64>,
    /// Set when the backend declined to answer.
    pub refused: Option<String>,
}

impl BackendReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), usage: None, wall_time: None, refused: None }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    /// One attempt; retries are the gateway's concern.
    fn complete(&self, req: &ChatRequest<'_>) -> Result<BackendReply, GatewayError>;
}

/// One logged backend attempt. Images appear only as content ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub backend: String,
    pub session: String,
    pub attempt: u32,
    pub context_messages: usize,
    pub request: Vec<Part>,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    pub elapsed: f64,
}

#[derive(Debug, Default)]
pub struct RequestLog {
    records: Mutex<Vec<AttemptRecord>>,
    file: Option<PathBuf>,
}

impl RequestLog {
    pub fn to_file(path: impl Into<PathBuf>) -> Self {
        Self { records: Mutex::default(), file: Some(path.into()) }
    }

    fn push(&self, rec: AttemptRecord) {
        if let Some(path) = &self.file {
            if let Some(dir) = path.parent() {
                let _ = std::fs::create_dir_all(dir);
            }
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
                if let Ok(line) = serde_json::to_string(&rec) {
                    let _ = writeln!(f, "{line}");
                }
            }
        }
        self.records.lock().unwrap().push(rec);
    }

    pub fn records(&self) -> Vec<AttemptRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_deref()
    }
}

/// Spaces calls to one backend at least `60 / rpm` seconds apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

fn limiter_for(id: &str, rpm: u32) -> Arc<RateLimiter> {
    static LIMITERS: OnceLock<Mutex<HashMap<String, Arc<RateLimiter>>>> = OnceLock::new();
    let interval = if rpm == 0 { Duration::ZERO } else { Duration::from_secs_f64(60.0 / rpm as f64) };
    let mut map = LIMITERS.get_or_init(Mutex::default).lock().unwrap();
    map.entry(format!("{id}@{rpm}"))
        .or_insert_with(|| Arc::new(RateLimiter { interval, next: Mutex::new(Instant::now()) }))
        .clone()
}

/// Sends session messages to one backend with retries, rate limiting,
/// usage accounting and attempt logging.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: BackendConfig,
    limiter: Arc<RateLimiter>,
    log: Arc<RequestLog>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.config.id).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: BackendConfig) -> Self {
        let limiter = limiter_for(&config.id, config.rate_limit);
        Self { backend, config, limiter, log: Arc::new(RequestLog::default()) }
    }

    /// Gateway for `config` using the real HTTP transport for remote kinds.
    pub fn from_config(config: BackendConfig) -> Self {
        Self::with_transport(config, Arc::new(ReqwestTransport::default()))
    }

    pub fn with_transport(config: BackendConfig, transport: Arc<dyn Transport>) -> Self {
        let backend: Arc<dyn Backend> = match config.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(config.id.clone(), config.mock.clone())),
            BackendKind::RemoteA | BackendKind::RemoteB => Arc::new(RemoteAdapter::new(config.clone(), transport)),
        };
        Self::new(backend, config)
    }

    pub fn mock() -> Self {
        Self::from_config(BackendConfig::mock())
    }

    pub fn with_request_log(mut self, log: RequestLog) -> Self {
        self.log = Arc::new(log);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn request_log(&self) -> &RequestLog {
        &self.log
    }

    /// Appends `msg` and the backend's reply to `session`.
    ///
    /// `blobs` must cover every image part of `msg` not already stored in
    /// the session. Nothing is appended when the call fails.
    pub fn send(
        &self,
        session: &mut ContextSession,
        msg: Message,
        blobs: Vec<Blob>,
    ) -> Result<(Message, TokenUsage), GatewayError> {
        if session.state() == SessionState::Aborted {
            return Err(GatewayError::SessionAborted);
        }
        for b in blobs {
            session.add_blob(b);
        }
        for p in &msg.parts {
            if let Part::Image { content_id, .. } = p {
                if !session.blobs().contains_key(content_id) {
                    return Err(GatewayError::MissingBlob(content_id.clone()));
                }
            }
        }
        let mut messages: Vec<Message> = session.messages().cloned().collect();
        messages.push(msg.clone());
        let req = ChatRequest { messages: &messages, blobs: session.blobs(), max_output_tokens: self.config.max_output_tokens };
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut attempt = 0;
        let (reply, elapsed) = loop {
            attempt += 1;
            self.limiter.acquire();
            let start = Instant::now();
            let result = self.backend.complete(&req);
            let elapsed = start.elapsed().as_secs_f64();
            let (outcome, text) = match &result {
                Ok(r) => (r.refused.as_ref().map_or("ok".to_string(), |why| format!("refused: {why}")), Some(r.text.clone())),
                Err(e) => (format!("error: {e}"), None),
            };
            self.log.push(AttemptRecord {
                backend: self.config.id.clone(),
                session: session.id.clone(),
                attempt,
                context_messages: messages.len() - 1,
                request: msg.parts.clone(),
                outcome,
                reply: text,
                elapsed,
            });
            match result {
                Ok(r) => break (r, elapsed),
                Err(e) if e.is_transient() && attempt < max_attempts => {
                    let delay = self.config.retry.base_backoff * 2f64.powi(attempt as i32 - 1);
                    tracing::warn!(backend = %self.config.id, attempt, "transient failure, retrying in {delay:.2}s: {e}");
                    if delay > 0.0 {
                        std::thread::sleep(Duration::from_secs_f64(delay));
                    }
                }
                Err(GatewayError::RateLimited { backend, .. }) => {
                    return Err(GatewayError::RateLimited { backend, attempts: attempt });
                }
                Err(e) => return Err(e),
            }
        };
        if let Some(reason) = reply.refused {
            return Err(GatewayError::BackendRefusal { backend: self.config.id.clone(), reason });
        }
        let est = self.config.estimator();
        let mut usage = reply.usage.unwrap_or_else(|| TokenUsage::new(est.parts(&msg.parts), est.text(&reply.text), 0.0));
        usage.wall_time = reply.wall_time.unwrap_or(elapsed);
        let mut answer = Message::assistant(reply.text);
        answer.meta.sample = msg.meta.sample.clone();
        session.push_exchange(msg, answer.clone(), usage);
        Ok((answer, usage))
    }
}
