use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendReply, ChatRequest};
use super::{GatewayError, Role, TurnKind};
use crate::icvl::{parse_label, ParsedLabel};
use crate::oracle::{mock_reply, CensusConfig, REFUSAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Latency reported for every call, in seconds.
    pub latency_secs: f64,
    /// Pads replies with trailing spaces up to this many estimated output
    /// tokens (4 bytes each).
    pub reply_tokens: Option<u64>,
    pub census: CensusConfig,
    /// Canned replies per sample id, consumed in order before the oracle
    /// is consulted.
    pub script: BTreeMap<String, Vec<String>>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self { latency_secs: 3.0, reply_tokens: None, census: CensusConfig::default(), script: BTreeMap::new() }
    }
}

/// Offline backend whose verdicts come from the limb census.
#[derive(Debug)]
pub struct MockBackend {
    id: String,
    config: MockConfig,
    script: Mutex<HashMap<String, VecDeque<String>>>,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, config: MockConfig) -> Self {
        let script = config.script.iter().map(|(k, v)| (k.clone(), v.iter().cloned().collect())).collect();
        Self { id: id.into(), config, script: Mutex::new(script) }
    }

    fn scripted(&self, sample: Option<&str>) -> Option<String> {
        let key = sample?;
        self.script.lock().unwrap().get_mut(key)?.pop_front()
    }

    fn pad(&self, mut text: String) -> String {
        if let Some(tokens) = self.config.reply_tokens {
            let target = (tokens * 4) as usize;
            if text.len() < target {
                text.extend(std::iter::repeat_n(' ', target - text.len()));
            }
        }
        text
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest<'_>) -> Result<BackendReply, GatewayError> {
        let Some(last) = req.messages.last().filter(|m| m.role == Role::User) else {
            return Ok(BackendReply::text(REFUSAL));
        };
        let text = match self.scripted(last.meta.sample.as_deref()) {
            Some(t) => t,
            None => match last.meta.turn {
                TurnKind::Correction => match parse_label(&last.text()) {
                    ParsedLabel::Token(t) => format!("class: {t}. Understood, this character belongs to the {t} class."),
                    ParsedLabel::Unparseable => REFUSAL.to_string(),
                },
                turn => mock_reply(last.meta.evidence.as_deref(), &self.config.census, turn),
            },
        };
        Ok(BackendReply {
            text: self.pad(text),
            usage: None,
            wall_time: Some(self.config.latency_secs),
            refused: None,
        })
    }
}
