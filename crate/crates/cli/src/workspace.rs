//! Operations shared by the command line and the HTTP service.
//!
//! Everything a run produces lives under `<runs_dir>/<run_id>/`:
//! `learn.json`, `learn.ndjson` and `blobs/` for the learned session,
//! `results.json`, `detect.ndjson`, `partition.json` and `errors.json` for
//! detection, and `overrides.ndjson` for human corrections.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toonscan_core::config::AppConfig;
use toonscan_core::detector::{DetectionResult, Detector, PartitionReport, SampleError};
use toonscan_core::eval::{cost_report, evaluate, results_csv, run_matrix, to_json, CostReport, EvalReport, MatrixReport, RunMatrixSpec};
use toonscan_core::gateway::{load_blobs, read_log, write_log, ContextSession, Gateway, LogRecord};
use toonscan_core::icvl::{learn, select_pool, LearnError, LearnSummary};
use toonscan_core::model::{Annotation, DatasetManifest, Label, ManifestStore, ModelError, Sample, Split};
use toonscan_core::pose::TransformOp;
use toonscan_core::prompt::{DiskMaterials, PromptForge, PromptVariant, TemplateSet};

#[derive(Debug, Error)]
pub enum OpError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl From<ModelError> for OpError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownSample(_) => OpError::NotFound(e.to_string()),
            ModelError::Validation { .. } | ModelError::Invalid(_) => OpError::Invalid(e.to_string()),
            _ => OpError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for OpError {
    fn from(e: std::io::Error) -> Self {
        OpError::Failed(e.to_string())
    }
}

pub type OpResult<T> = Result<T, OpError>;

fn failed(e: impl std::fmt::Display) -> OpError {
    OpError::Failed(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> OpResult<T> {
    let text = fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> OpResult<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, to_json(value))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A human correction layered over a raw detection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub seq: u64,
    pub run_id: String,
    pub sample_id: String,
    pub label: Label,
    pub reason: String,
    pub author: String,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub result: DetectionResult,
    pub truth: Label,
    /// Label after the latest override, or the prediction.
    pub effective: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overridden: Option<Override>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn: Option<LearnSummary>,
    pub rows: Vec<ResultRow>,
    pub partition: PartitionReport,
    pub errors: Vec<SampleError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub run_id: String,
    pub transform: TransformOp,
    pub n_results: usize,
    pub partition: PartitionReport,
    pub errors: Vec<SampleError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolView {
    pub correct: Vec<String>,
    pub hallucinated: Vec<String>,
}

pub struct Workspace {
    pub config: AppConfig,
    pub store: ManifestStore,
    pub forge: PromptForge,
    pub runs_dir: PathBuf,
    gateways: Mutex<HashMap<String, Gateway>>,
    override_lock: Mutex<()>,
}

pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

impl Workspace {
    pub fn open(config: AppConfig, manifest: &Path) -> OpResult<Self> {
        let store = ManifestStore::open(manifest)?;
        let templates = match &config.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir).map_err(failed)?,
            None => TemplateSet::builtin(),
        };
        let runs_dir = config.runs_dir.clone();
        fs::create_dir_all(&runs_dir)?;
        Ok(Self {
            config,
            store,
            forge: PromptForge::new(templates),
            runs_dir,
            gateways: Mutex::new(HashMap::new()),
            override_lock: Mutex::new(()),
        })
    }

    pub fn manifest(&self) -> Arc<DatasetManifest> {
        self.store.snapshot()
    }

    pub fn materials(&self) -> DiskMaterials {
        DiskMaterials::new(self.store.root())
    }

    pub fn sample(&self, id: &str) -> OpResult<Sample> {
        self.manifest().get(id).cloned().ok_or_else(|| OpError::NotFound(format!("unknown sample {id}")))
    }

    /// Gateway for a configured backend id, shared across calls.
    pub fn gateway(&self, id: &str) -> OpResult<Gateway> {
        let mut map = self.gateways.lock().expect("gateway cache poisoned");
        if let Some(g) = map.get(id) {
            return Ok(g.clone());
        }
        let gw = self.config.gateway(id).ok_or_else(|| OpError::Invalid(format!("unknown backend {id}")))?;
        map.insert(id.to_string(), gw.clone());
        Ok(gw)
    }

    pub fn run_dir(&self, run_id: &str) -> OpResult<PathBuf> {
        if !valid_run_id(run_id) {
            return Err(OpError::Invalid(format!("invalid run id {run_id:?}")));
        }
        Ok(self.runs_dir.join(run_id))
    }

    fn existing_run(&self, run_id: &str) -> OpResult<PathBuf> {
        let dir = self.run_dir(run_id)?;
        if !dir.join("learn.json").is_file() {
            return Err(OpError::NotFound(format!("unknown run {run_id}")));
        }
        Ok(dir)
    }

    pub fn pool(&self) -> PoolView {
        let m = self.manifest();
        let ids = |l: Label| m.split(Split::ExamplePool).filter(|s| s.label() == l).map(|s| s.id.clone()).collect();
        PoolView { correct: ids(Label::Correct), hallucinated: ids(Label::Hallucinated) }
    }

    pub fn set_pool(&self, ids: &[String]) -> OpResult<PoolView> {
        self.store.set_pool(ids)?;
        Ok(self.pool())
    }

    pub fn save_annotation(&self, id: &str, ann: Annotation, move_to: Option<Split>) -> OpResult<Sample> {
        let m = self.store.save_annotation(id, ann, move_to)?;
        Ok(m.get(id).cloned().expect("annotated sample exists"))
    }

    /// Learns a session from the example pool and stores it as `run_id`.
    pub fn learn(&self, run_id: &str, backend: &str, variant: PromptVariant, shots: usize) -> OpResult<LearnSummary> {
        let dir = self.run_dir(run_id)?;
        let gw = self.gateway(backend)?;
        let manifest = self.manifest();
        let pool = select_pool(manifest.split(Split::ExamplePool), shots);
        if variant.uses_examples() && pool.len() < 2 * shots {
            return Err(OpError::Invalid(format!(
                "example pool holds {} labeled samples, {shots} per class needed",
                pool.len()
            )));
        }
        let materials = self.materials();
        let result = learn(&gw, &self.forge, &materials, variant, &pool, &self.config.learn, run_id);
        let outcome = match &result {
            Ok(o) => Some(o),
            Err(e) => e.outcome(),
        };
        if let Some(o) = outcome {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::create_dir_all(&dir)?;
            o.session.save_blobs(&dir.join("blobs"))?;
            write_log(&dir.join("learn.ndjson"), &o.session.log_records()).map_err(failed)?;
            write_json(&dir.join("learn.json"), &o.summary())?;
        }
        match result {
            Ok(o) => Ok(o.summary()),
            Err(e @ LearnError::Prompt(_)) | Err(e @ LearnError::Policy(_)) => Err(OpError::Invalid(format!("run {run_id}: {e}"))),
            Err(e) => Err(failed(format!("run {run_id}: {e}"))),
        }
    }

    pub fn learn_summary(&self, run_id: &str) -> OpResult<LearnSummary> {
        read_json(&self.existing_run(run_id)?.join("learn.json"))
    }

    /// The stored learned session of `run_id`.
    pub fn learned_session(&self, run_id: &str) -> OpResult<(ContextSession, LearnSummary)> {
        let dir = self.existing_run(run_id)?;
        let summary: LearnSummary = read_json(&dir.join("learn.json"))?;
        let records = read_log(&dir.join("learn.ndjson")).map_err(failed)?;
        let blobs = load_blobs(&records, &dir.join("blobs")).map_err(failed)?;
        let mut session = ContextSession::restore(summary.variant, summary.state, &records, blobs).map_err(failed)?;
        session.backend = summary.backend.clone();
        Ok((session, summary))
    }

    /// Classifies every test and unlabeled sample against the run's session.
    pub fn detect(&self, run_id: &str, transform: TransformOp, fail_fast: bool) -> OpResult<DetectSummary> {
        let (session, summary) = self.learned_session(run_id)?;
        let dir = self.run_dir(run_id)?;
        let gw = self.gateway(&summary.backend)?;
        let manifest = self.manifest();
        let samples: Vec<&Sample> = manifest.samples.iter().filter(|s| s.split != Split::ExamplePool).collect();
        let materials = self.materials();
        let det = Detector { gateway: &gw, forge: &self.forge, materials: &materials, transform };
        let out = det.batch_detect(&session, &samples, fail_fast).map_err(|e| failed(format!("run {run_id}: {e}")))?;
        write_log(&dir.join("detect.ndjson"), &out.records).map_err(failed)?;
        write_json(&dir.join("results.json"), &out.results)?;
        write_json(&dir.join("partition.json"), &out.partition)?;
        write_json(&dir.join("errors.json"), &out.errors)?;
        Ok(DetectSummary {
            run_id: run_id.to_string(),
            transform,
            n_results: out.results.len(),
            partition: out.partition,
            errors: out.errors,
        })
    }

    pub fn results(&self, run_id: &str) -> OpResult<Vec<DetectionResult>> {
        let path = self.existing_run(run_id)?.join("results.json");
        if !path.is_file() {
            return Ok(Vec::new());
        }
        read_json(&path)
    }

    /// Scores the run's results on labeled samples. Overrides are not applied.
    pub fn evaluate(&self, run_id: &str) -> OpResult<EvalReport> {
        let results = self.results(run_id)?;
        if results.is_empty() {
            return Err(OpError::Invalid(format!("run {run_id} has no detection results")));
        }
        let manifest = self.manifest();
        let labeled: Vec<_> = results
            .into_iter()
            .filter(|r| manifest.get(&r.sample_id).is_none_or(|s| s.label().is_known()))
            .collect();
        let report = evaluate(&labeled, &manifest).map_err(|e| failed(format!("run {run_id}: {e}")))?;
        write_json(&self.run_dir(run_id)?.join("eval.json"), &report)?;
        Ok(report)
    }

    pub fn cost(&self, run_id: &str) -> OpResult<CostReport> {
        let dir = self.existing_run(run_id)?;
        let mut records: Vec<LogRecord> = read_log(&dir.join("learn.ndjson")).map_err(failed)?;
        let detect = dir.join("detect.ndjson");
        if detect.is_file() {
            records.extend(read_log(&detect).map_err(failed)?);
        }
        let report = cost_report(&records, &self.config.cost).map_err(|e| failed(format!("run {run_id}: {e}")))?;
        write_json(&dir.join("cost.json"), &report)?;
        Ok(report)
    }

    pub fn overrides(&self, run_id: &str) -> OpResult<Vec<Override>> {
        let path = self.existing_run(run_id)?.join("overrides.ndjson");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| failed(format!("{}: {e}", path.display()))))
            .collect()
    }

    /// Appends an override for one result of `run_id`.
    pub fn add_override(&self, run_id: &str, sample_id: &str, label: Label, reason: &str, author: &str) -> OpResult<Override> {
        if !label.is_known() {
            return Err(OpError::Invalid("override label must be correct or hallucinated".into()));
        }
        if reason.trim().is_empty() {
            return Err(OpError::Invalid("override reason must not be empty".into()));
        }
        let _guard = self.override_lock.lock().expect("override lock poisoned");
        if !self.results(run_id)?.iter().any(|r| r.sample_id == sample_id) {
            return Err(OpError::NotFound(format!("run {run_id} has no result for sample {sample_id}")));
        }
        let rec = Override {
            seq: self.overrides(run_id)?.len() as u64,
            run_id: run_id.to_string(),
            sample_id: sample_id.to_string(),
            label,
            reason: reason.to_string(),
            author: author.to_string(),
            recorded_at: Utc::now(),
        };
        let path = self.run_dir(run_id)?.join("overrides.ndjson");
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut line = serde_json::to_vec(&rec).map_err(failed)?;
        line.push(b'\n');
        f.write_all(&line)?;
        Ok(rec)
    }

    /// Results with ground truth and the latest override per sample.
    pub fn run_results(&self, run_id: &str) -> OpResult<RunResults> {
        let learn = Some(self.learn_summary(run_id)?);
        let results = self.results(run_id)?;
        let mut latest: HashMap<String, Override> = HashMap::new();
        for o in self.overrides(run_id)? {
            latest.insert(o.sample_id.clone(), o);
        }
        let manifest = self.manifest();
        let dir = self.run_dir(run_id)?;
        let errors = if dir.join("errors.json").is_file() { read_json(&dir.join("errors.json"))? } else { Vec::new() };
        let partition = PartitionReport::from_results(&results);
        let rows = results
            .into_iter()
            .map(|r| {
                let truth = manifest.get(&r.sample_id).map_or(Label::Unknown, |s| s.label());
                let overridden = latest.remove(&r.sample_id);
                let effective = overridden.as_ref().map(|o| o.label).or(r.predicted);
                ResultRow { result: r, truth, effective, overridden }
            })
            .collect();
        Ok(RunResults { run_id: run_id.to_string(), learn, rows, partition, errors })
    }

    /// CSV of the run's results; the last column is the label after overrides.
    pub fn export_csv(&self, run_id: &str) -> OpResult<String> {
        let view = self.run_results(run_id)?;
        let raw: Vec<DetectionResult> = view.rows.iter().map(|r| r.result.clone()).collect();
        let csv = results_csv(&raw, &self.manifest());
        let mut out = String::with_capacity(csv.len() + raw.len() * 16);
        for (i, line) in csv.lines().enumerate() {
            out.push_str(line);
            if i == 0 {
                out.push_str(",effective");
            } else {
                let eff = match view.rows[i - 1].effective {
                    Some(Label::Correct) => "correct",
                    Some(Label::Hallucinated) => "hallucinated",
                    _ => "",
                };
                out.push(',');
                out.push_str(eff);
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Runs a matrix spec on the manifest and writes its report under `out_dir`.
    pub fn matrix(&self, spec: &RunMatrixSpec, out_dir: &Path) -> OpResult<MatrixReport> {
        let gateways = spec
            .backends
            .iter()
            .filter_map(|b| self.gateway(b).ok())
            .collect::<Vec<_>>();
        let manifest = self.manifest();
        fs::create_dir_all(out_dir)?;
        write_json(&out_dir.join("spec.json"), spec)?;
        run_matrix(spec, &manifest, &gateways, &self.forge, &self.materials(), Some(out_dir)).map_err(|e| match e {
            toonscan_core::eval::EvalError::Spec(m) => OpError::Invalid(m),
            e => failed(e),
        })
    }
}
