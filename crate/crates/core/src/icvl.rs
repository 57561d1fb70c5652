//! Verified in-context example injection.
//!
//! Each pool sample is shown to the backend as an example turn; the session
//! advances to the next sample only when the reply's class token matches the
//! sample's label. Mismatches are answered with a corrective message and
//! retried up to the policy limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ContextSession, Gateway, GatewayError, Message, Part, SessionState, TokenUsage, TurnKind};
use crate::model::{ClassToken, Label, Sample};
use crate::prompt::{MaterialSource, PromptError, PromptForge, PromptVariant};
use crate::pose::TransformOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "token")]
pub enum ParsedLabel {
    Token(ClassToken),
    Unparseable,
}

impl ParsedLabel {
    pub fn token(self) -> Option<ClassToken> {
        match self {
            ParsedLabel::Token(t) => Some(t),
            ParsedLabel::Unparseable => None,
        }
    }
}

fn joins_word(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || matches!(c, '_' | '\'' | '’' | '-'))
}

fn token_at(chars: &[char], i: usize) -> Option<ClassToken> {
    let t = match chars.get(i)? {
        'C' => ClassToken::C,
        'H' => ClassToken::H,
        _ => return None,
    };
    let prev = i.checked_sub(1).map(|p| chars[p]);
    let next = chars.get(i + 1).copied();
    (!joins_word(prev) && !joins_word(next)).then_some(t)
}

/// Extracts the class token from a reply.
///
/// `class: C` / `class: H` (or `Class:`) anywhere in the reply wins; failing
/// that, the first standalone capital `C` or `H`. Matching is case-sensitive.
pub fn parse_label(reply: &str) -> ParsedLabel {
    let chars: Vec<char> = reply.chars().collect();
    for (i, w) in chars.windows(5).enumerate() {
        let key: String = w.iter().collect();
        if key != "class" && key != "Class" {
            continue;
        }
        if joins_word(i.checked_sub(1).map(|p| chars[p])) {
            continue;
        }
        let mut j = i + 5;
        while chars.get(j) == Some(&' ') {
            j += 1;
        }
        if chars.get(j) != Some(&':') {
            continue;
        }
        j += 1;
        while chars.get(j) == Some(&' ') {
            j += 1;
        }
        if let Some(t) = token_at(&chars, j) {
            return ParsedLabel::Token(t);
        }
    }
    (0..chars.len()).find_map(|i| token_at(&chars, i)).map_or(ParsedLabel::Unparseable, ParsedLabel::Token)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhaust {
    #[default]
    Abort,
    SkipAndFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrder {
    ManifestOrder,
    #[default]
    AlternatingClasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnPolicy {
    /// Attempts per example, counting the first.
    pub max_retries_per_example: u32,
    pub on_exhaust: OnExhaust,
    pub example_order: ExampleOrder,
}

impl Default for LearnPolicy {
    fn default() -> Self {
        Self { max_retries_per_example: 3, on_exhaust: OnExhaust::Abort, example_order: ExampleOrder::AlternatingClasses }
    }
}

impl LearnPolicy {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.max_retries_per_example < 1 {
            return Err(LearnError::Policy("max_retries_per_example must be at least 1".into()));
        }
        Ok(())
    }

    /// Pool in presentation order.
    pub fn order<'a>(&self, pool: &[&'a Sample]) -> Vec<&'a Sample> {
        match self.example_order {
            ExampleOrder::ManifestOrder => pool.to_vec(),
            ExampleOrder::AlternatingClasses => {
                let c: Vec<_> = pool.iter().filter(|s| s.label() == Label::Correct).copied().collect();
                let h: Vec<_> = pool.iter().filter(|s| s.label() != Label::Correct).copied().collect();
                let mut out = Vec::with_capacity(pool.len());
                for i in 0..c.len().max(h.len()) {
                    out.extend(c.get(i));
                    out.extend(h.get(i));
                }
                out
            }
        }
    }
}

/// The first `per_class` correct and first `per_class` hallucinated samples.
pub fn select_pool<'a>(candidates: impl IntoIterator<Item = &'a Sample>, per_class: usize) -> Vec<&'a Sample> {
    let (mut c, mut h) = (0, 0);
    let mut out = Vec::new();
    for s in candidates {
        match s.label() {
            Label::Correct if c < per_class => {
                c += 1;
                out.push(s);
            }
            Label::Hallucinated if h < per_class => {
                h += 1;
                out.push(s);
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedExample {
    pub sample_id: String,
    pub attempts: u32,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub session: ContextSession,
    pub verified: Vec<VerifiedExample>,
    pub flagged: Vec<String>,
    pub usage: TokenUsage,
}

/// Serializable digest of a learn run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnSummary {
    pub session_id: String,
    pub backend: String,
    pub variant: PromptVariant,
    pub state: SessionState,
    pub verified: Vec<VerifiedExample>,
    pub flagged: Vec<String>,
    pub usage: TokenUsage,
}

impl LearnOutcome {
    pub fn summary(&self) -> LearnSummary {
        LearnSummary {
            session_id: self.session.id.clone(),
            backend: self.session.backend.clone(),
            variant: self.session.variant,
            state: self.session.state(),
            verified: self.verified.clone(),
            flagged: self.flagged.clone(),
            usage: self.usage,
        }
    }
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid learn policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("sample {sample}: {source}")]
    Backend {
        sample: String,
        #[source]
        source: GatewayError,
        outcome: Box<LearnOutcome>,
    },
    #[error("sample {sample} not confirmed after {attempts} attempts")]
    Exhausted { sample: String, attempts: u32, outcome: Box<LearnOutcome> },
}

impl LearnError {
    /// The partial outcome for errors raised after the session started.
    pub fn outcome(&self) -> Option<&LearnOutcome> {
        match self {
            LearnError::Backend { outcome, .. } | LearnError::Exhausted { outcome, .. } => Some(outcome),
            _ => None,
        }
    }
}

/// Corrective restatement sent after a wrong answer.
pub fn correction_text(token: ClassToken, description: &str) -> String {
    let desc = description.trim().trim_end_matches('.').trim();
    let because = if desc.is_empty() {
        match token {
            ClassToken::C => "the character has correct human anatomy",
            ClassToken::H => "the character has abnormal human anatomy",
        }
    } else {
        desc
    };
    format!("The correct class is {token} because {because}.")
}

/// Builds a learned session from `pool`.
///
/// Variants without examples ignore the pool and finish as `Learned(0)`.
pub fn learn(
    gateway: &Gateway,
    forge: &PromptForge,
    materials: &dyn MaterialSource,
    variant: PromptVariant,
    pool: &[&Sample],
    policy: &LearnPolicy,
    session_id: &str,
) -> Result<LearnOutcome, LearnError> {
    policy.validate()?;
    let order = if variant.uses_examples() { policy.order(pool) } else { Vec::new() };
    for s in &order {
        let ann = s.annotation.as_ref().ok_or_else(|| PromptError::MissingAnnotation(s.id.clone()))?;
        if !ann.label.is_known() {
            return Err(PromptError::UnknownLabel(s.id.clone()).into());
        }
    }
    let session = ContextSession::new(session_id, gateway.id(), variant, forge.system_prompt(variant));
    let mut out = LearnOutcome { session, verified: Vec::new(), flagged: Vec::new(), usage: TokenUsage::default() };

    for (t, sample) in order.iter().enumerate() {
        out.session.set_state(SessionState::Learning(t + 1));
        let material = materials.material(sample, TransformOp::None)?;
        let turn = forge.example_prompt(variant, sample, &material)?;
        let expected = turn.expected_class.expect("example turns carry a class");
        let description = sample.annotation.as_ref().map(|a| a.description.as_str()).unwrap_or_default();
        let mut msg = turn.message();
        let mut blobs = turn.blobs();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let sent = gateway.send(&mut out.session, msg, std::mem::take(&mut blobs));
            let reply = match sent {
                Ok((reply, _)) => reply,
                Err(source) => {
                    out.session.set_state(SessionState::Aborted);
                    out.usage = out.session.usage();
                    return Err(LearnError::Backend { sample: sample.id.clone(), source, outcome: Box::new(out) });
                }
            };
            if parse_label(&reply.text()) == ParsedLabel::Token(expected) {
                out.verified.push(VerifiedExample { sample_id: sample.id.clone(), attempts });
                break;
            }
            if attempts >= policy.max_retries_per_example {
                match policy.on_exhaust {
                    OnExhaust::Abort => {
                        out.session.set_state(SessionState::Aborted);
                        out.usage = out.session.usage();
                        tracing::warn!(sample = %sample.id, attempts, "example not confirmed, aborting");
                        return Err(LearnError::Exhausted { sample: sample.id.clone(), attempts, outcome: Box::new(out) });
                    }
                    OnExhaust::SkipAndFlag => {
                        tracing::warn!(sample = %sample.id, attempts, "example not confirmed, flagged");
                        out.flagged.push(sample.id.clone());
                        break;
                    }
                }
            }
            msg = Message::user(vec![Part::text(correction_text(expected, description))], TurnKind::Correction)
                .with_sample(sample.id.clone())
                .with_evidence(turn.evidence.clone());
        }
    }
    out.session.set_state(SessionState::Learned(out.verified.len()));
    out.usage = out.session.usage();
    Ok(out)
}
