//! Dataset model for the hallucination-aware character dataset.
//!
//! A dataset is a single JSON manifest plus sidecar files (PNG images and
//! heatmaps) resolved relative to the manifest's directory. Annotation writes
//! go through [`ManifestStore`], which serializes writers, replaces the
//! manifest atomically and appends every annotation to an NDJSON audit log.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::JointSet;

/// Image height every sample must decode to.
pub const IMAGE_HEIGHT: u32 = 384;
/// Image width every sample must decode to.
pub const IMAGE_WIDTH: u32 = 256;

pub const MANIFEST_VERSION: u32 = 1;

/// Ground-truth state of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Correct,
    Hallucinated,
    Unknown,
}

impl Label {
    /// The label sentence used when a label is stated to a model.
    pub fn sentence(self) -> &'static str {
        match self {
            Label::Correct => "This is correct one",
            Label::Hallucinated => "This is hallucinated one",
            Label::Unknown => "This is unknown one",
        }
    }

    pub fn is_known(self) -> bool {
        !matches!(self, Label::Unknown)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sentence())
    }
}

/// Class token a model answers with: `C` for correct anatomy, `H` for a
/// hallucinated one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassToken {
    C,
    H,
}

impl ClassToken {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassToken::C => "C",
            ClassToken::H => "H",
        }
    }

    /// Token for a known label; `None` for [`Label::Unknown`].
    pub fn for_label(label: Label) -> Option<ClassToken> {
        match label {
            Label::Correct => Some(ClassToken::C),
            Label::Hallucinated => Some(ClassToken::H),
            Label::Unknown => None,
        }
    }

    /// Detection mapping: `C` joins the clean set, `H` the hallucinated set.
    pub fn label(self) -> Label {
        match self {
            ClassToken::C => Label::Correct,
            ClassToken::H => Label::Hallucinated,
        }
    }
}

impl fmt::Display for ClassToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Taxonomy of structural defects observed in generated characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    /// Missing body components (one arm, one leg, no head).
    FewComponents,
    /// Over-depicted body components (three arms, three legs).
    ManyComponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: Label,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<DefectClass>,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
}

impl Annotation {
    pub fn new(label: Label, description: impl Into<String>, annotator: impl Into<String>) -> Self {
        Self {
            label,
            description: description.into(),
            defect: None,
            annotator: annotator.into(),
            timestamp: Utc::now(),
        }
    }

    pub fn with_defect(mut self, defect: DefectClass) -> Self {
        self.defect = Some(defect);
        self
    }

    /// Checks the annotation's own invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.label == Label::Hallucinated && self.description.trim().is_empty() {
            return Err("hallucinated annotation requires a non-empty description".into());
        }
        if self.defect.is_some() && self.label != Label::Hallucinated {
            return Err("defect class is only allowed on hallucinated annotations".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseArtifacts {
    pub heatmap_ref: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<JointSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_ref: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    ExamplePool,
    Test,
    Unlabeled,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::ExamplePool => "example-pool",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image_ref: PathBuf,
    pub motion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseArtifacts>,
    pub split: Split,
}

impl Sample {
    pub fn label(&self) -> Label {
        self.annotation.as_ref().map_or(Label::Unknown, |a| a.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub provenance: String,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            samples: Vec::new(),
            provenance: String::new(),
        }
    }
}

impl DatasetManifest {
    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Sample> {
        self.samples.iter_mut().find(|s| s.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.split).or_insert(0) += 1;
        }
        counts
    }

    /// Checks invariants that do not need the filesystem.
    pub fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                out.push(Violation::DuplicateId { sample_id: s.id.clone() });
            }
            if let Some(ann) = &s.annotation {
                if let Err(reason) = ann.validate() {
                    out.push(Violation::Invariant { sample_id: s.id.clone(), reason });
                }
            }
            if s.split == Split::ExamplePool && !s.label().is_known() {
                out.push(Violation::Invariant {
                    sample_id: s.id.clone(),
                    reason: "example-pool sample requires a correct/hallucinated annotation".into(),
                });
            }
        }
        out
    }
}

/// One problem found while validating a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingFile { sample_id: String, path: PathBuf },
    Dimension { sample_id: String, height: u32, width: u32 },
    UnreadableImage { sample_id: String, reason: String },
    DuplicateId { sample_id: String },
    Invariant { sample_id: String, reason: String },
}

impl Violation {
    pub fn sample_id(&self) -> &str {
        match self {
            Violation::MissingFile { sample_id, .. }
            | Violation::Dimension { sample_id, .. }
            | Violation::UnreadableImage { sample_id, .. }
            | Violation::DuplicateId { sample_id }
            | Violation::Invariant { sample_id, .. } => sample_id,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingFile { sample_id, path } => {
                write!(f, "{sample_id}: missing file {}", path.display())
            }
            Violation::Dimension { sample_id, height, width } => write!(
                f,
                "{sample_id}: image is {height}x{width}, expected {IMAGE_HEIGHT}x{IMAGE_WIDTH}"
            ),
            Violation::UnreadableImage { sample_id, reason } => {
                write!(f, "{sample_id}: unreadable image: {reason}")
            }
            Violation::DuplicateId { sample_id } => write!(f, "{sample_id}: duplicate sample id"),
            Violation::Invariant { sample_id, reason } => write!(f, "{sample_id}: {reason}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("manifest failed validation:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown sample {0}")]
    UnknownSample(String),
    #[error("invalid annotation for {sample_id}: {reason}")]
    Validation { sample_id: String, reason: String },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io { path: path.to_path_buf(), source }
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ModelError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// A validated manifest together with its location and load diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub splits: BTreeMap<Split, usize>,
    pub warnings: Vec<String>,
}

impl LoadedManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        resolve_path(&self.root, rel)
    }
}

pub fn resolve_path(root: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        root.join(rel)
    }
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Reads and validates a manifest. Every violation is collected before
/// returning so a single run reports all broken samples.
pub fn load_manifest(path: &Path) -> Result<LoadedManifest, ModelError> {
    let text = fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| ModelError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let root = manifest_root(path);
    let mut violations = manifest.structural_violations();
    let mut warnings = Vec::new();

    for s in &manifest.samples {
        let image = resolve_path(&root, &s.image_ref);
        if !image.is_file() {
            violations.push(Violation::MissingFile { sample_id: s.id.clone(), path: image });
        } else {
            match image::image_dimensions(&image) {
                Ok((w, h)) if (h, w) != (IMAGE_HEIGHT, IMAGE_WIDTH) => {
                    violations.push(Violation::Dimension { sample_id: s.id.clone(), height: h, width: w })
                }
                Ok(_) => {}
                Err(e) => violations.push(Violation::UnreadableImage {
                    sample_id: s.id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        match &s.pose {
            Some(pose) => {
                let hm = resolve_path(&root, &pose.heatmap_ref);
                if !hm.is_file() {
                    violations.push(Violation::MissingFile { sample_id: s.id.clone(), path: hm });
                }
                if let Some(overlay) = &pose.overlay_ref {
                    let ov = resolve_path(&root, overlay);
                    if !ov.is_file() {
                        violations.push(Violation::MissingFile { sample_id: s.id.clone(), path: ov });
                    }
                }
            }
            None if s.split == Split::ExamplePool => {
                warnings.push(format!("{}: example-pool sample has no pose artifacts", s.id))
            }
            None => {}
        }
    }

    if !violations.is_empty() {
        return Err(ModelError::Invalid(violations));
    }
    let splits = manifest.split_counts();
    tracing::info!(
        path = %path.display(),
        samples = manifest.samples.len(),
        ?splits,
        "loaded manifest"
    );
    Ok(LoadedManifest { manifest, root, splits, warnings })
}

/// Writes `manifest` to `path` through a temp file in the same directory
/// followed by a rename, so readers never observe a partial document.
pub fn write_manifest_atomic(path: &Path, manifest: &DatasetManifest) -> Result<(), ModelError> {
    let dir = manifest_root(path);
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| ModelError::io(&dir, e))?;
    let body = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    tmp.write_all(&body).map_err(|e| ModelError::io(path, e))?;
    tmp.write_all(b"\n").map_err(|e| ModelError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| ModelError::io(path, e))?;
    tmp.persist(path).map_err(|e| ModelError::io(path, e.error))?;
    Ok(())
}

/// One line of the annotation audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub sample_id: String,
    pub annotation: Annotation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub recorded_at: DateTime<Utc>,
}

/// Path of the audit log that accompanies a manifest.
pub fn audit_log_path(manifest_path: &Path) -> PathBuf {
    let mut name = manifest_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".audit.ndjson");
    manifest_path.with_file_name(name)
}

pub fn read_audit_log(path: &Path) -> Result<Vec<AuditRecord>, ModelError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ModelError::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ModelError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| ModelError::Schema {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Replays an audit log over a manifest: each record's annotation (and split
/// move, when recorded) is applied in order.
pub fn replay_audit(manifest: &mut DatasetManifest, records: &[AuditRecord]) {
    for rec in records {
        if let Some(s) = manifest.get_mut(&rec.sample_id) {
            s.annotation = Some(rec.annotation.clone());
            if let Some(split) = rec.split {
                s.split = split;
            }
        }
    }
}

/// Single-writer handle on a manifest file.
///
/// Readers take cheap snapshots; writers are serialized and each write
/// replaces the file atomically before the in-memory snapshot is swapped.
#[derive(Debug)]
pub struct ManifestStore {
    path: PathBuf,
    root: PathBuf,
    current: RwLock<Arc<DatasetManifest>>,
    writer: Mutex<()>,
}

impl ManifestStore {
    pub fn open(path: &Path) -> Result<Self, ModelError> {
        let loaded = load_manifest(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            root: loaded.root,
            current: RwLock::new(Arc::new(loaded.manifest)),
            writer: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn audit_path(&self) -> PathBuf {
        audit_log_path(&self.path)
    }

    pub fn snapshot(&self) -> Arc<DatasetManifest> {
        self.current.read().expect("manifest lock poisoned").clone()
    }

    pub fn loaded(&self) -> LoadedManifest {
        let manifest = (*self.snapshot()).clone();
        LoadedManifest {
            splits: manifest.split_counts(),
            manifest,
            root: self.root.clone(),
            warnings: Vec::new(),
        }
    }

    /// Records an annotation for `id`. When `move_to` is given the sample's
    /// split changes in the same write.
    pub fn save_annotation(
        &self,
        id: &str,
        ann: Annotation,
        move_to: Option<Split>,
    ) -> Result<Arc<DatasetManifest>, ModelError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.snapshot()).clone();
        let sample = next
            .get_mut(id)
            .ok_or_else(|| ModelError::UnknownSample(id.to_string()))?;
        ann.validate().map_err(|reason| ModelError::Validation {
            sample_id: id.to_string(),
            reason,
        })?;
        let split = move_to.unwrap_or(sample.split);
        if split == Split::ExamplePool && !ann.label.is_known() {
            return Err(ModelError::Validation {
                sample_id: id.to_string(),
                reason: "example-pool sample requires a correct/hallucinated label".into(),
            });
        }
        sample.annotation = Some(ann.clone());
        sample.split = split;

        let audit = self.audit_path();
        let seq = read_audit_log(&audit)?.len() as u64;
        write_manifest_atomic(&self.path, &next)?;
        let record = AuditRecord {
            seq,
            sample_id: id.to_string(),
            annotation: ann,
            split: move_to,
            recorded_at: Utc::now(),
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&audit)
            .map_err(|e| ModelError::io(&audit, e))?;
        let mut line = serde_json::to_vec(&record).expect("audit record serializes");
        line.push(b'\n');
        f.write_all(&line).map_err(|e| ModelError::io(&audit, e))?;

        let next = Arc::new(next);
        *self.current.write().expect("manifest lock poisoned") = next.clone();
        Ok(next)
    }

    /// Makes `ids` the example pool. Samples leaving the pool move to the
    /// test split.
    pub fn set_pool(&self, ids: &[String]) -> Result<Arc<DatasetManifest>, ModelError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.snapshot()).clone();
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        for id in &wanted {
            let s = next.get(id).ok_or_else(|| ModelError::UnknownSample(id.to_string()))?;
            if !s.label().is_known() {
                return Err(ModelError::Validation {
                    sample_id: id.to_string(),
                    reason: "pool members must be labeled correct or hallucinated".into(),
                });
            }
        }
        for s in &mut next.samples {
            if wanted.contains(s.id.as_str()) {
                s.split = Split::ExamplePool;
            } else if s.split == Split::ExamplePool {
                s.split = Split::Test;
            }
        }
        write_manifest_atomic(&self.path, &next)?;
        let next = Arc::new(next);
        *self.current.write().expect("manifest lock poisoned") = next.clone();
        Ok(next)
    }
}
