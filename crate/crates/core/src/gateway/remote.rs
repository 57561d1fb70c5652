use std::collections::VecDeque;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use thiserror::Error;

use super::backend::{Backend, BackendConfig, BackendKind, BackendReply, ChatRequest};
use super::{network, GatewayError, Part, Role, TokenUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        Self { status, body: body.into() }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("network access is disabled")]
    Denied,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("request timed out")]
    Timeout,
}

pub trait Transport: Send + Sync {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTPS transport. Honors the process-wide network switch.
#[derive(Default)]
pub struct ReqwestTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl Transport for ReqwestTransport {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        network::record_attempt();
        if network::is_denied() {
            return Err(TransportError::Denied);
        }
        let client = self.client.get_or_init(reqwest::blocking::Client::new);
        let mut builder = client.post(&req.url).timeout(req.timeout).json(&req.body);
        for (k, v) in &req.headers {
            builder = builder.header(k, v);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.without_url().to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError::Connect(e.without_url().to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Replays a fixed sequence of responses and records every request.
#[derive(Default)]
pub struct ScriptedTransport {
    responses: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
    requests: Mutex<Vec<HttpRequest>>,
}

impl ScriptedTransport {
    pub fn new(responses: impl IntoIterator<Item = Result<HttpResponse, TransportError>>) -> Self {
        Self { responses: Mutex::new(responses.into_iter().collect()), requests: Mutex::default() }
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Transport for ScriptedTransport {
    fn post(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.requests.lock().unwrap().push(req.clone());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Connect("script exhausted".into())))
    }
}

/// Adapter for the two hosted chat APIs.
pub struct RemoteAdapter {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
}

impl RemoteAdapter {
    pub fn new(config: BackendConfig, transport: Arc<dyn Transport>) -> Self {
        Self { config, transport }
    }

    fn credential(&self) -> Result<String, GatewayError> {
        let name = &self.config.credential_env;
        let missing = || GatewayError::AuthError {
            backend: self.config.id.clone(),
            message: format!("credential variable {name:?} is not set"),
        };
        if name.is_empty() {
            return Err(missing());
        }
        match std::env::var(name) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(missing()),
        }
    }

    fn image_data(&self, req: &ChatRequest<'_>, id: &str) -> Result<(String, String), GatewayError> {
        let blob = req.blobs.get(id).ok_or_else(|| GatewayError::MissingBlob(id.to_string()))?;
        Ok((blob.media_type.clone(), base64::engine::general_purpose::STANDARD.encode(blob.bytes.as_slice())))
    }

    fn build(&self, req: &ChatRequest<'_>, key: &str) -> Result<HttpRequest, GatewayError> {
        let timeout = Duration::from_secs(self.config.timeout_secs.max(1));
        match self.config.kind {
            BackendKind::RemoteA => {
                let mut messages = Vec::new();
                for m in req.messages {
                    let role = match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    };
                    let mut content = Vec::new();
                    for p in &m.parts {
                        content.push(match p {
                            Part::Text { text } => json!({"type": "text", "text": text}),
                            Part::Image { content_id, .. } => {
                                let (mime, data) = self.image_data(req, content_id)?;
                                json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}})
                            }
                        });
                    }
                    messages.push(json!({"role": role, "content": content}));
                }
                Ok(HttpRequest {
                    url: self.config.endpoint.clone(),
                    headers: vec![("Authorization".into(), format!("Bearer {key}"))],
                    body: json!({
                        "model": self.config.model_name,
                        "messages": messages,
                        "max_tokens": req.max_output_tokens,
                        "temperature": 0,
                    }),
                    timeout,
                })
            }
            BackendKind::RemoteB => {
                let mut system = Vec::new();
                let mut contents = Vec::new();
                for m in req.messages {
                    let mut parts = Vec::new();
                    for p in &m.parts {
                        parts.push(match p {
                            Part::Text { text } => json!({"text": text}),
                            Part::Image { content_id, .. } => {
                                let (mime, data) = self.image_data(req, content_id)?;
                                json!({"inline_data": {"mime_type": mime, "data": data}})
                            }
                        });
                    }
                    match m.role {
                        Role::System => system.extend(parts),
                        Role::User => contents.push(json!({"role": "user", "parts": parts})),
                        Role::Assistant => contents.push(json!({"role": "model", "parts": parts})),
                    }
                }
                let url = format!(
                    "{}/models/{}:generateContent",
                    self.config.endpoint.trim_end_matches('/'),
                    self.config.model_name
                );
                Ok(HttpRequest {
                    url,
                    headers: vec![("x-goog-api-key".into(), key.to_string())],
                    body: json!({
                        "systemInstruction": {"parts": system},
                        "contents": contents,
                        "generationConfig": {"maxOutputTokens": req.max_output_tokens, "temperature": 0},
                    }),
                    timeout,
                })
            }
            BackendKind::Mock => unreachable!("mock backends do not use the remote adapter"),
        }
    }

    fn bad(&self, message: impl Into<String>) -> GatewayError {
        GatewayError::BadResponse { backend: self.config.id.clone(), message: message.into() }
    }

    fn parse(&self, body: &str) -> Result<BackendReply, GatewayError> {
        let v: Value = serde_json::from_str(body).map_err(|e| self.bad(e.to_string()))?;
        match self.config.kind {
            BackendKind::RemoteA => {
                let choice = v["choices"].get(0).ok_or_else(|| self.bad("no choices"))?;
                let text = choice["message"]["content"].as_str().unwrap_or_default().to_string();
                let refused = match (choice["finish_reason"].as_str(), choice["message"]["refusal"].as_str()) {
                    (_, Some(r)) if !r.is_empty() => Some(r.to_string()),
                    (Some("content_filter"), _) => Some("content_filter".into()),
                    _ => None,
                };
                let usage = v["usage"]["prompt_tokens"].as_u64().map(|input| {
                    TokenUsage::new(input, v["usage"]["completion_tokens"].as_u64().unwrap_or(0), 0.0)
                });
                Ok(BackendReply { text, usage, wall_time: None, refused })
            }
            _ => {
                if let Some(reason) = v["promptFeedback"]["blockReason"].as_str() {
                    return Ok(BackendReply { text: String::new(), usage: None, wall_time: None, refused: Some(reason.into()) });
                }
                let cand = v["candidates"].get(0).ok_or_else(|| self.bad("no candidates"))?;
                let text = cand["content"]["parts"]
                    .as_array()
                    .map(|ps| ps.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join(""))
                    .unwrap_or_default();
                let refused = match cand["finishReason"].as_str() {
                    Some(r @ ("SAFETY" | "RECITATION" | "PROHIBITED_CONTENT" | "BLOCKLIST")) => Some(r.to_string()),
                    _ => None,
                };
                let meta = &v["usageMetadata"];
                let usage = meta["promptTokenCount"]
                    .as_u64()
                    .map(|input| TokenUsage::new(input, meta["candidatesTokenCount"].as_u64().unwrap_or(0), 0.0));
                Ok(BackendReply { text, usage, wall_time: None, refused })
            }
        }
    }
}

impl Backend for RemoteAdapter {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn complete(&self, req: &ChatRequest<'_>) -> Result<BackendReply, GatewayError> {
        let key = self.credential()?;
        let http = self.build(req, &key)?;
        let backend = self.config.id.clone();
        let resp = self.transport.post(&http).map_err(|e| GatewayError::TransportError {
            backend: backend.clone(),
            transient: !matches!(e, TransportError::Denied),
            message: e.to_string(),
        })?;
        let snippet = || resp.body.chars().take(200).collect::<String>().replace(&key, "[redacted]");
        match resp.status {
            200..=299 => self.parse(&resp.body),
            429 => Err(GatewayError::RateLimited { backend, attempts: 1 }),
            401 | 403 => Err(GatewayError::AuthError { backend, message: format!("status {}", resp.status) }),
            408 | 500..=599 => Err(GatewayError::TransportError {
                backend,
                message: format!("status {}: {}", resp.status, snippet()),
                transient: true,
            }),
            s => Err(GatewayError::TransportError { backend, message: format!("status {s}: {}", snippet()), transient: false }),
        }
    }
}
