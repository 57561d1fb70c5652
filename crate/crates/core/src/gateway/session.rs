use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Blob, GatewayError, Message, MessageMeta, Part, Role, TokenUsage, TurnKind};
use crate::prompt::PromptVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "n", rename_all = "snake_case")]
pub enum SessionState {
    Initialized,
    /// Working on example `t` (1-based).
    Learning(usize),
    /// `N` verified example exchanges are in context.
    Learned(usize),
    Aborted,
}

impl std::fmt::Display for SessionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionState::Initialized => f.write_str("Initialized"),
            SessionState::Learning(t) => write!(f, "Learning({t})"),
            SessionState::Learned(n) => write!(f, "Learned({n})"),
            SessionState::Aborted => f.write_str("Aborted"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Learn,
    Detect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub seq: u64,
    pub message: Message,
    /// Usage of the call that produced this turn; zero for user and system turns.
    pub usage: TokenUsage,
    pub phase: Phase,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub session: String,
    pub seq: u64,
    pub role: Role,
    pub phase: Phase,
    pub turn: TurnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
    pub parts: Vec<Part>,
    pub usage: TokenUsage,
    pub wall_time: f64,
}

impl LogRecord {
    pub fn message(&self) -> Message {
        Message {
            role: self.role,
            parts: self.parts.clone(),
            meta: MessageMeta { turn: self.turn, sample: self.sample.clone(), evidence: None },
        }
    }
}

/// A chat context: system prompt, verified examples and queries.
#[derive(Debug, Clone)]
pub struct ContextSession {
    pub id: String,
    pub backend: String,
    pub variant: PromptVariant,
    turns: Vec<Turn>,
    blobs: BTreeMap<String, Blob>,
    usage: TokenUsage,
    state: SessionState,
    phase: Phase,
    /// Number of turns inherited from the parent when forked.
    prefix_len: usize,
}

impl ContextSession {
    pub fn new(id: impl Into<String>, backend: impl Into<String>, variant: PromptVariant, system: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            backend: backend.into(),
            variant,
            turns: vec![Turn { seq: 0, message: Message::system(system), usage: TokenUsage::default(), phase: Phase::Learn }],
            blobs: BTreeMap::new(),
            usage: TokenUsage::default(),
            state: SessionState::Initialized,
            phase: Phase::Learn,
            prefix_len: 0,
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.turns.iter().map(|t| &t.message)
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn system_prompt(&self) -> String {
        self.turns[0].message.text()
    }

    pub fn last(&self) -> &Message {
        &self.turns.last().expect("session has a system turn").message
    }

    pub fn usage(&self) -> TokenUsage {
        self.usage
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn set_state(&mut self, state: SessionState) {
        self.state = state;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn blobs(&self) -> &BTreeMap<String, Blob> {
        &self.blobs
    }

    pub fn add_blob(&mut self, blob: Blob) {
        self.blobs.entry(blob.content_id.clone()).or_insert(blob);
    }

    /// Turns added since this session was forked (all turns for a root session).
    pub fn own_turns(&self) -> &[Turn] {
        &self.turns[self.prefix_len..]
    }

    /// Independent copy of a learned session for one detection query.
    pub fn fork(&self, id: impl Into<String>) -> Result<ContextSession, GatewayError> {
        if !matches!(self.state, SessionState::Learned(_)) {
            return Err(GatewayError::NotLearned(self.state.to_string()));
        }
        let mut f = self.clone();
        f.id = id.into();
        f.phase = Phase::Detect;
        f.prefix_len = f.turns.len();
        Ok(f)
    }

    pub(super) fn push_exchange(&mut self, user: Message, reply: Message, usage: TokenUsage) {
        let seq = self.turns.len() as u64;
        let phase = self.phase;
        self.turns.push(Turn { seq, message: user, usage: TokenUsage::default(), phase });
        self.turns.push(Turn { seq: seq + 1, message: reply, usage, phase });
        self.usage += usage;
    }

    fn record(&self, t: &Turn) -> LogRecord {
        LogRecord {
            session: self.id.clone(),
            seq: t.seq,
            role: t.message.role,
            phase: t.phase,
            turn: t.message.meta.turn,
            sample: t.message.meta.sample.clone(),
            parts: t.message.parts.clone(),
            usage: t.usage,
            wall_time: t.usage.wall_time,
        }
    }

    pub fn log_records(&self) -> Vec<LogRecord> {
        self.turns.iter().map(|t| self.record(t)).collect()
    }

    /// Records for turns added since the fork point.
    pub fn own_log_records(&self) -> Vec<LogRecord> {
        self.own_turns().iter().map(|t| self.record(t)).collect()
    }

    /// Rebuilds a session from its log and saved blobs.
    pub fn restore(
        variant: PromptVariant,
        state: SessionState,
        records: &[LogRecord],
        blobs: BTreeMap<String, Blob>,
    ) -> Result<ContextSession, GatewayError> {
        let first = records.first().ok_or_else(|| GatewayError::Format("empty session log".into()))?;
        if first.role != Role::System {
            return Err(GatewayError::Format("session log must start with the system turn".into()));
        }
        let mut turns = Vec::with_capacity(records.len());
        let mut usage = TokenUsage::default();
        for (i, r) in records.iter().enumerate() {
            if r.seq != i as u64 || r.session != first.session {
                return Err(GatewayError::Format(format!("session log out of order at record {i}")));
            }
            for p in &r.parts {
                if let Part::Image { content_id, .. } = p {
                    if !blobs.contains_key(content_id) {
                        return Err(GatewayError::MissingBlob(content_id.clone()));
                    }
                }
            }
            usage += r.usage;
            turns.push(Turn { seq: r.seq, message: r.message(), usage: r.usage, phase: r.phase });
        }
        Ok(ContextSession {
            id: first.session.clone(),
            backend: String::new(),
            variant,
            turns,
            blobs,
            usage,
            state,
            phase: Phase::Learn,
            prefix_len: 0,
        })
    }

    /// Writes every stored image to `dir/<hex>.bin`, named by content id.
    pub fn save_blobs(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for blob in self.blobs.values() {
            let path = dir.join(blob_file_name(&blob.content_id));
            if !path.exists() {
                fs::write(path, blob.bytes.as_slice())?;
            }
        }
        Ok(())
    }
}

pub(crate) fn blob_file_name(content_id: &str) -> String {
    format!("{}.bin", content_id.trim_start_matches("sha256:"))
}

/// Loads blobs saved by [`ContextSession::save_blobs`] for the image parts in `records`.
pub fn load_blobs(records: &[LogRecord], dir: &Path) -> Result<BTreeMap<String, Blob>, GatewayError> {
    let mut out = BTreeMap::new();
    for r in records {
        for p in &r.parts {
            if let Part::Image { content_id, media_type, width, height } = p {
                if out.contains_key(content_id) {
                    continue;
                }
                let path = dir.join(blob_file_name(content_id));
                let bytes = fs::read(&path).map_err(|_| GatewayError::MissingBlob(content_id.clone()))?;
                let blob = Blob::new(media_type.clone(), *width, *height, bytes);
                if &blob.content_id != content_id {
                    return Err(GatewayError::Format(format!("blob {} does not match its content", path.display())));
                }
                out.insert(content_id.clone(), blob);
            }
        }
    }
    Ok(out)
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), GatewayError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| GatewayError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, GatewayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}
