//! Background jobs for the HTTP service, persisted as
//! `<runs_dir>/jobs/<job_id>.json`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use toonscan_core::eval::{to_json, RunMatrixSpec};
use toonscan_core::pose::TransformOp;
use toonscan_core::prompt::PromptVariant;

use crate::workspace::{valid_run_id, OpError, OpResult, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Learn,
    Detect,
    Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_final(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

fn default_backend() -> String {
    "mock".into()
}

fn default_shots() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub kind: JobKind,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub variant: Option<PromptVariant>,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default)]
    pub transform: TransformOp,
    #[serde(default)]
    pub spec: Option<RunMatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub run_id: String,
    /// `(done, total)` steps.
    pub progress: (usize, usize),
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
    pub request: JobRequest,
}

pub struct JobManager {
    dir: PathBuf,
    jobs: Mutex<BTreeMap<String, JobRecord>>,
    /// Runs with a queued or running job.
    busy_runs: Mutex<HashSet<String>>,
}

impl JobManager {
    /// Loads job records from disk. Jobs left unfinished by a previous
    /// process are marked failed.
    pub fn open(runs_dir: &Path) -> OpResult<Self> {
        let dir = runs_dir.join("jobs");
        fs::create_dir_all(&dir)?;
        let mut jobs = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let mut rec: JobRecord = match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(path = %path.display(), "skipping unreadable job record: {e}");
                    continue;
                }
            };
            if !rec.status.is_final() {
                rec.status = JobStatus::Failed;
                rec.error = Some("interrupted by service restart".into());
                fs::write(&path, to_json(&rec))?;
            }
            jobs.insert(rec.job_id.clone(), rec);
        }
        Ok(Self { dir, jobs: Mutex::new(jobs), busy_runs: Mutex::new(HashSet::new()) })
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.jobs.lock().expect("job table poisoned").get(id).cloned()
    }

    pub fn learn_running(&self) -> bool {
        self.jobs
            .lock()
            .expect("job table poisoned")
            .values()
            .any(|j| matches!(j.kind, JobKind::Learn | JobKind::Matrix) && !j.status.is_final())
    }

    fn store(&self, rec: &JobRecord) {
        if let Err(e) = fs::write(self.dir.join(format!("{}.json", rec.job_id)), to_json(rec)) {
            tracing::error!(job = %rec.job_id, "cannot persist job record: {e}");
        }
        self.jobs.lock().expect("job table poisoned").insert(rec.job_id.clone(), rec.clone());
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord)) -> Option<JobRecord> {
        let mut rec = self.get(id)?;
        let before = rec.status;
        f(&mut rec);
        debug_assert!(rec.status >= before, "job status moved backwards");
        self.store(&rec);
        Some(rec)
    }

    /// Validates and queues a job, then runs it on a worker thread.
    pub fn submit(self: &Arc<Self>, ws: Arc<Workspace>, req: JobRequest) -> OpResult<JobRecord> {
        let job_id = format!("job-{}", uuid::Uuid::new_v4().simple());
        let run_id = match (&req.run_id, req.kind) {
            (Some(r), _) => r.clone(),
            (None, JobKind::Detect) => return Err(OpError::Invalid("detect jobs need a run_id".into())),
            (None, _) => format!("run-{}", &job_id[4..16]),
        };
        if !valid_run_id(&run_id) {
            return Err(OpError::Invalid(format!("invalid run id {run_id:?}")));
        }
        match req.kind {
            JobKind::Learn if req.shots == 0 => return Err(OpError::Invalid("shots must be at least 1".into())),
            JobKind::Matrix => match &req.spec {
                Some(s) => s.validate().map_err(|e| OpError::Invalid(e.to_string()))?,
                None => return Err(OpError::Invalid("matrix jobs need a spec".into())),
            },
            JobKind::Detect => {
                ws.learn_summary(&run_id)?;
            }
            _ => {}
        }
        match &req.spec {
            Some(spec) if req.kind == JobKind::Matrix => {
                for b in &spec.backends {
                    ws.gateway(b)?;
                }
            }
            _ => {
                ws.gateway(&req.backend)?;
            }
        }
        {
            let mut busy = self.busy_runs.lock().expect("busy set poisoned");
            if !busy.insert(run_id.clone()) {
                return Err(OpError::Conflict(format!("run {run_id} already has an active job")));
            }
        }
        let rec = JobRecord {
            job_id: job_id.clone(),
            kind: req.kind,
            status: JobStatus::Queued,
            run_id: run_id.clone(),
            progress: (0, 1),
            artifacts: Vec::new(),
            error: None,
            summary: None,
            request: req.clone(),
        };
        self.store(&rec);
        let me = self.clone();
        std::thread::spawn(move || {
            me.update(&job_id, |r| r.status = JobStatus::Running);
            let outcome = execute(&ws, &run_id, &req);
            me.busy_runs.lock().expect("busy set poisoned").remove(&run_id);
            me.update(&job_id, |r| match outcome {
                Ok((summary, artifacts)) => {
                    r.status = JobStatus::Done;
                    r.progress = (1, 1);
                    r.summary = Some(summary);
                    r.artifacts = artifacts;
                }
                Err(e) => {
                    r.status = JobStatus::Failed;
                    r.error = Some(e.to_string());
                }
            });
        });
        Ok(rec)
    }

    /// Blocks until the job reaches a final state.
    pub fn wait(&self, id: &str, timeout: std::time::Duration) -> Option<JobRecord> {
        let start = std::time::Instant::now();
        loop {
            let rec = self.get(id)?;
            if rec.status.is_final() || start.elapsed() > timeout {
                return Some(rec);
            }
            std::thread::sleep(std::time::Duration::from_millis(20));
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> OpResult<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| OpError::Failed(e.to_string()))
}

fn execute(ws: &Workspace, run_id: &str, req: &JobRequest) -> OpResult<(serde_json::Value, Vec<String>)> {
    let rel = |name: &str| format!("{run_id}/{name}");
    match req.kind {
        JobKind::Learn => {
            let variant = req.variant.unwrap_or(PromptVariant::FINAL);
            let s = ws.learn(run_id, &req.backend, variant, req.shots)?;
            Ok((to_value(&s)?, vec![rel("learn.json"), rel("learn.ndjson")]))
        }
        JobKind::Detect => {
            let s = ws.detect(run_id, req.transform, false)?;
            Ok((to_value(&s)?, vec![rel("results.json"), rel("detect.ndjson"), rel("partition.json")]))
        }
        JobKind::Matrix => {
            let spec = req.spec.clone().expect("validated at submit");
            let dir = ws.runs_dir.join(run_id);
            let report = ws.matrix(&spec, &dir)?;
            let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
            let summary = serde_json::json!({"cells": report.cells.len(), "failed_cells": failed});
            Ok((summary, vec![rel("report.json"), rel("report.txt")]))
        }
    }
}
