//! Classification of unknown samples against a learned session.
//!
//! Every query runs on its own fork of the learned session, so results do
//! not depend on query order. Parsed token `C` sends a sample to the clean
//! set and `H` to the hallucinated set; anything else is kept apart as
//! unparseable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BackendKind, ContextSession, Gateway, GatewayError, LogRecord, TokenUsage};
use crate::icvl::parse_label;
use crate::model::{ClassToken, Label, Sample};
use crate::oracle::{limb_census, CensusVerdict};
use crate::pose::TransformOp;
use crate::prompt::{MaterialSource, PromptError, PromptForge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub sample_id: String,
    /// `None` when the reply had no class token.
    pub predicted: Option<Label>,
    pub raw_reply: String,
    pub class_token: Option<ClassToken>,
    pub usage: TokenUsage,
    pub latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub census: Option<CensusVerdict>,
}

impl DetectionResult {
    pub fn is_unparseable(&self) -> bool {
        self.class_token.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub clean: Vec<String>,
    pub hallucinated: Vec<String>,
    pub unparseable: Vec<String>,
}

impl PartitionReport {
    pub fn from_results(results: &[DetectionResult]) -> Self {
        let mut p = PartitionReport::default();
        for r in results {
            let list = match r.class_token {
                Some(ClassToken::C) => &mut p.clean,
                Some(ClassToken::H) => &mut p.hallucinated,
                None => &mut p.unparseable,
            };
            list.push(r.sample_id.clone());
        }
        p
    }

    pub fn len(&self) -> usize {
        self.clean.len() + self.hallucinated.len() + self.unparseable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("sample {sample}: {source}")]
    Prompt {
        sample: String,
        #[source]
        source: PromptError,
    },
    #[error("sample {sample}: {source}")]
    Backend {
        sample: String,
        #[source]
        source: GatewayError,
    },
}

impl DetectError {
    pub fn sample_id(&self) -> &str {
        match self {
            DetectError::Prompt { sample, .. } | DetectError::Backend { sample, .. } => sample,
        }
    }
}

/// A per-sample failure recorded without halting a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample_id: String,
    pub message: String,
}

/// Shared inputs for detection calls.
pub struct Detector<'a> {
    pub gateway: &'a Gateway,
    pub forge: &'a PromptForge,
    pub materials: &'a dyn MaterialSource,
    pub transform: TransformOp,
}

/// One classified sample and the fork that produced it.
#[derive(Debug, Clone)]
pub struct Classified {
    pub result: DetectionResult,
    pub fork: ContextSession,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub results: Vec<DetectionResult>,
    pub errors: Vec<SampleError>,
    pub partition: PartitionReport,
    /// Log records of every fork's own turns, in input order.
    pub records: Vec<LogRecord>,
}

impl Detector<'_> {
    pub fn classify(&self, learned: &ContextSession, sample: &Sample) -> Result<Classified, DetectError> {
        let prompt_err = |source| DetectError::Prompt { sample: sample.id.clone(), source };
        let backend_err = |source| DetectError::Backend { sample: sample.id.clone(), source };
        let mut fork = learned.fork(format!("{}/{}", learned.id, sample.id)).map_err(backend_err)?;
        let material = self.materials.material(sample, self.transform).map_err(prompt_err)?;
        let query = self.forge.query_prompt(learned.variant, &sample.id, &material).map_err(prompt_err)?;
        let census = match (self.gateway.config().kind, &query.evidence.joints, &query.evidence.heatmap) {
            (BackendKind::Mock, Some(j), Some(h)) if query.evidence.pose_visible => {
                Some(limb_census(j, Some(h), &self.gateway.config().mock.census))
            }
            _ => None,
        };
        let (reply, usage) = self.gateway.send(&mut fork, query.message(), query.blobs()).map_err(backend_err)?;
        let raw_reply = reply.text();
        let class_token = parse_label(&raw_reply).token();
        let result = DetectionResult {
            sample_id: sample.id.clone(),
            predicted: class_token.map(ClassToken::label),
            raw_reply,
            class_token,
            usage,
            latency: usage.wall_time,
            census,
        };
        Ok(Classified { result, fork })
    }

    /// Classifies `samples` on independent forks, in parallel unless
    /// `fail_fast` is set, in which case the first error stops the batch.
    pub fn batch_detect(
        &self,
        learned: &ContextSession,
        samples: &[&Sample],
        fail_fast: bool,
    ) -> Result<BatchOutcome, DetectError> {
        let outcomes: Vec<Result<Classified, DetectError>> = if fail_fast {
            let mut v = Vec::with_capacity(samples.len());
            for s in samples {
                v.push(Ok(self.classify(learned, s)?));
            }
            v
        } else {
            samples.par_iter().map(|s| self.classify(learned, s)).collect()
        };
        let mut out = BatchOutcome::default();
        for o in outcomes {
            match o {
                Ok(c) => {
                    out.records.extend(c.fork.own_log_records());
                    out.results.push(c.result);
                }
                Err(e) => {
                    tracing::warn!(sample = e.sample_id(), "detection failed: {e}");
                    out.errors.push(SampleError { sample_id: e.sample_id().to_string(), message: e.to_string() });
                }
            }
        }
        out.partition = PartitionReport::from_results(&out.results);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, token: Option<ClassToken>) -> DetectionResult {
        DetectionResult {
            sample_id: id.into(),
            predicted: token.map(ClassToken::label),
            raw_reply: String::new(),
            class_token: token,
            usage: TokenUsage::default(),
            latency: 0.0,
            census: None,
        }
    }

    #[test]
    fn partition_follows_tokens() {
        let rs = vec![result("a", Some(ClassToken::C)), result("b", Some(ClassToken::H)), result("c", None)];
        let p = PartitionReport::from_results(&rs);
        assert_eq!(p.clean, ["a"]);
        assert_eq!(p.hallucinated, ["b"]);
        assert_eq!(p.unparseable, ["c"]);
        assert_eq!(p.len(), 3);
        assert!(PartitionReport::from_results(&[]).is_empty());
    }
}
