//! Prompt construction for every ablation variant.
//!
//! Template texts are shipped as data files under `templates/` and can be
//! replaced by a directory of edited copies; a [`TemplateSet`] carries a
//! content-derived version so runs record exactly which wording they used.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Blob, Message, Part, TurnKind};
use crate::model::{resolve_path, ClassToken, DefectClass, Label, Sample};
use crate::oracle::PoseEvidence;
use crate::pose::{
    composite_overlay, decode_joints, encode_png, heatmap_image, joint_image, joints_to_text, Colormap, Dims,
    Heatmap, JointSet, OverlayParams, PoseError, TransformOp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVariant {
    A,
    B,
    C,
    D1,
    D2,
    D3,
    D4,
    D5,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 8] = [
        PromptVariant::A,
        PromptVariant::B,
        PromptVariant::C,
        PromptVariant::D1,
        PromptVariant::D2,
        PromptVariant::D3,
        PromptVariant::D4,
        PromptVariant::D5,
    ];

    /// The final model configuration.
    pub const FINAL: PromptVariant = PromptVariant::D5;

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::A => "A",
            PromptVariant::B => "B",
            PromptVariant::C => "C",
            PromptVariant::D1 => "D1",
            PromptVariant::D2 => "D2",
            PromptVariant::D3 => "D3",
            PromptVariant::D4 => "D4",
            PromptVariant::D5 => "D5",
        }
    }

    /// Attachments sent with every example and query, in order.
    pub fn attachments(self) -> &'static [AttachmentKind] {
        use AttachmentKind::*;
        match self {
            PromptVariant::A | PromptVariant::B => &[],
            PromptVariant::C => &[Rgb],
            PromptVariant::D1 => &[Rgb, GaussianHeatmap],
            PromptVariant::D2 => &[Overlay],
            PromptVariant::D3 => &[Rgb, Overlay],
            PromptVariant::D4 => &[Rgb, JointImage],
            PromptVariant::D5 => &[Rgb, JointText],
        }
    }

    /// Whether examples are injected at all (A and B use the system prompt only).
    pub fn uses_examples(self) -> bool {
        !matches!(self, PromptVariant::A | PromptVariant::B)
    }

    pub fn uses_pose(self) -> bool {
        self.attachments().iter().any(|a| a.is_pose())
    }

    fn has_definition(self) -> bool {
        self != PromptVariant::A
    }

    fn inputs_clause(self) -> &'static str {
        match self {
            PromptVariant::D1 | PromptVariant::D2 | PromptVariant::D3 => " and heatmap image",
            PromptVariant::D4 => " and joint image",
            PromptVariant::D5 => " and joint file",
            _ => "",
        }
    }

    fn template_key(self) -> Option<&'static str> {
        match self {
            PromptVariant::A | PromptVariant::B => None,
            PromptVariant::C => Some("c"),
            PromptVariant::D1 => Some("d1"),
            PromptVariant::D2 => Some("d2"),
            PromptVariant::D3 => Some("d3"),
            PromptVariant::D4 => Some("d4"),
            PromptVariant::D5 => Some("d5"),
        }
    }

    /// Short description of the variant's inputs for report tables.
    pub fn description(self) -> &'static str {
        match self {
            PromptVariant::A => "System prompt",
            PromptVariant::B => "System prompt + definition",
            PromptVariant::C => "B + RGB examples",
            PromptVariant::D1 => "C + Gaussian heatmap",
            PromptVariant::D2 => "Overlay heatmap only",
            PromptVariant::D3 => "C + overlay heatmap",
            PromptVariant::D4 => "C + joint image",
            PromptVariant::D5 => "C + joint file",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected one of A, B, C, D1..D5)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    Rgb,
    GaussianHeatmap,
    Overlay,
    JointImage,
    JointText,
}

impl AttachmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AttachmentKind::Rgb => "rgb",
            AttachmentKind::GaussianHeatmap => "gaussian_heatmap",
            AttachmentKind::Overlay => "overlay",
            AttachmentKind::JointImage => "joint_image",
            AttachmentKind::JointText => "joint_text",
        }
    }

    pub fn is_pose(self) -> bool {
        self != AttachmentKind::Rgb
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("sample {0} has no annotation")]
    MissingAnnotation(String),
    #[error("sample {0} is not labeled correct or hallucinated")]
    UnknownLabel(String),
    #[error("sample {sample}: missing pose artifact ({what})")]
    MissingPoseArtifact { sample: String, what: String },
    #[error("variant {0} takes no in-context examples")]
    NoExamples(PromptVariant),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("sample {sample}: {source}")]
    Pose {
        sample: String,
        #[source]
        source: PoseError,
    },
    #[error("sample {sample}: cannot read {path}: {message}")]
    Io { sample: String, path: PathBuf, message: String },
}

impl PromptError {
    pub fn sample_id(&self) -> Option<&str> {
        match self {
            PromptError::MissingAnnotation(s) | PromptError::UnknownLabel(s) => Some(s),
            PromptError::MissingPoseArtifact { sample, .. }
            | PromptError::Pose { sample, .. }
            | PromptError::Io { sample, .. } => Some(sample),
            _ => None,
        }
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("system.txt", include_str!("../templates/system.txt")),
    ("definition.txt", include_str!("../templates/definition.txt")),
    ("provision.txt", include_str!("../templates/provision.txt")),
    ("query.txt", include_str!("../templates/query.txt")),
    ("example_c_correct.txt", include_str!("../templates/example_c_correct.txt")),
    ("example_c_hallucinated.txt", include_str!("../templates/example_c_hallucinated.txt")),
    ("example_d1_correct.txt", include_str!("../templates/example_d1_correct.txt")),
    ("example_d1_hallucinated.txt", include_str!("../templates/example_d1_hallucinated.txt")),
    ("example_d2_correct.txt", include_str!("../templates/example_d2_correct.txt")),
    ("example_d2_hallucinated.txt", include_str!("../templates/example_d2_hallucinated.txt")),
    ("example_d3_correct.txt", include_str!("../templates/example_d3_correct.txt")),
    ("example_d3_hallucinated.txt", include_str!("../templates/example_d3_hallucinated.txt")),
    ("example_d4_correct.txt", include_str!("../templates/example_d4_correct.txt")),
    ("example_d4_hallucinated.txt", include_str!("../templates/example_d4_hallucinated.txt")),
    ("example_d5_correct.txt", include_str!("../templates/example_d5_correct.txt")),
    ("example_d5_hallucinated.txt", include_str!("../templates/example_d5_hallucinated.txt")),
];

const EXAMPLE_SLOTS: &[&str] = &["motion", "defect", "class_token"];

/// A complete, versioned set of prompt templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    /// File name to template text, trailing newline removed.
    pub files: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::from_files(BUILTIN.iter().map(|(n, t)| (n.to_string(), t.to_string())).collect())
            .expect("builtin templates are complete")
    }

    pub fn file_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// Loads edited templates from `dir`. Files absent from the directory
    /// fall back to the builtin text.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut files = BTreeMap::new();
        for (name, builtin) in BUILTIN {
            let path = dir.join(name);
            let text = match fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => builtin.to_string(),
                Err(e) => {
                    return Err(PromptError::Template { name: name.to_string(), message: e.to_string() });
                }
            };
            files.insert(name.to_string(), text);
        }
        Self::from_files(files)
    }

    /// Copy with one template replaced. The version changes accordingly.
    pub fn with_file(&self, name: &str, text: &str) -> Result<Self, PromptError> {
        if !self.files.contains_key(name) {
            return Err(PromptError::Template { name: name.into(), message: "unknown template file".into() });
        }
        let mut files = self.files.clone();
        files.insert(name.to_string(), text.to_string());
        Self::from_files(files)
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, text) in &self.files {
            fs::write(dir.join(name), format!("{text}\n"))?;
        }
        Ok(())
    }

    fn from_files(raw: BTreeMap<String, String>) -> Result<Self, PromptError> {
        let mut files = BTreeMap::new();
        let mut hasher = Sha256::new();
        for (name, text) in raw {
            let text = text.strip_suffix('\n').unwrap_or(&text).to_string();
            check_slots(&name, &text)?;
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(text.as_bytes());
            hasher.update([0]);
            files.insert(name, text);
        }
        let version = hex::encode(&hasher.finalize()[..6]);
        Ok(Self { version, files })
    }

    fn get(&self, name: &str) -> &str {
        self.files.get(name).map(String::as_str).unwrap_or_default()
    }

    pub fn system_prompt(&self, v: PromptVariant) -> String {
        let mut out = self.get("system.txt").to_string();
        if v.has_definition() {
            out.push_str("  ");
            out.push_str(self.get("definition.txt"));
        }
        if v.uses_examples() {
            out.push(' ');
            out.push_str(&self.get("provision.txt").replace("{inputs}", v.inputs_clause()));
        }
        out
    }

    /// Example text for `label` with slots filled.
    pub fn render_example(
        &self,
        v: PromptVariant,
        label: Label,
        motion: &str,
        defect: &str,
    ) -> Result<String, PromptError> {
        let key = v.template_key().ok_or(PromptError::NoExamples(v))?;
        let token = ClassToken::for_label(label).ok_or_else(|| PromptError::UnknownLabel(String::new()))?;
        let suffix = match label {
            Label::Correct => "correct",
            _ => "hallucinated",
        };
        let template = self.get(&format!("example_{key}_{suffix}.txt"));
        Ok(template
            .replace("{motion}", motion)
            .replace("{defect}", defect)
            .replace("{class_token}", token.as_str()))
    }

    pub fn query_text(&self) -> &str {
        self.get("query.txt")
    }
}

fn check_slots(name: &str, text: &str) -> Result<(), PromptError> {
    let allowed: &[&str] = if name.starts_with("example_") {
        EXAMPLE_SLOTS
    } else if name == "provision.txt" {
        &["inputs"]
    } else {
        &[]
    };
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let slot = &after[..close];
        if slot.chars().all(|c| c.is_ascii_lowercase() || c == '_') && !slot.is_empty() && !allowed.contains(&slot) {
            return Err(PromptError::Template { name: name.into(), message: format!("unknown slot {{{slot}}}") });
        }
        rest = &after[close + 1..];
    }
    if name.starts_with("example_") && !text.contains("{class_token}") {
        return Err(PromptError::Template { name: name.into(), message: "missing {class_token} slot".into() });
    }
    Ok(())
}

/// Text substituted into `{defect}`: the first clause of the annotation's
/// description, or a fixed phrase for the defect class.
pub fn defect_phrase(description: &str, defect: Option<DefectClass>) -> String {
    let clause = description.split(['.', ';', '\n']).next().unwrap_or("").trim();
    if !clause.is_empty() {
        return clause.to_string();
    }
    match defect {
        Some(DefectClass::FewComponents) => "missing body components".into(),
        Some(DefectClass::ManyComponents) => "extra body components".into(),
        None => "abnormal body components".into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttachmentContent {
    Image(Blob),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub kind: AttachmentKind,
    pub content: AttachmentContent,
}

impl Attachment {
    pub fn part(&self) -> Part {
        match &self.content {
            AttachmentContent::Image(b) => b.part(),
            AttachmentContent::Text(t) => Part::text(t.clone()),
        }
    }
}

/// One rendered user turn: an example when `expected_class` is set, a
/// detection query otherwise.
#[derive(Debug, Clone)]
pub struct ExampleTurn {
    pub sample_id: String,
    pub instruction: String,
    pub attachments: Vec<Attachment>,
    pub expected_class: Option<ClassToken>,
    pub evidence: Arc<PoseEvidence>,
}

impl ExampleTurn {
    pub fn attachment_kinds(&self) -> Vec<AttachmentKind> {
        self.attachments.iter().map(|a| a.kind).collect()
    }

    pub fn blobs(&self) -> Vec<Blob> {
        self.attachments
            .iter()
            .filter_map(|a| match &a.content {
                AttachmentContent::Image(b) => Some(b.clone()),
                AttachmentContent::Text(_) => None,
            })
            .collect()
    }

    /// Attachments first, then the instruction unless it is empty.
    pub fn message(&self) -> Message {
        let kind = if self.expected_class.is_some() { TurnKind::Example } else { TurnKind::Query };
        let mut parts: Vec<Part> = self.attachments.iter().map(Attachment::part).collect();
        if !self.instruction.is_empty() {
            parts.push(Part::text(self.instruction.clone()));
        }
        Message::user(parts, kind).with_sample(self.sample_id.clone()).with_evidence(self.evidence.clone())
    }
}

/// Decoded inputs for one sample after an optional transform.
#[derive(Debug, Clone)]
pub struct SampleMaterial {
    pub sample_id: String,
    pub rgb: RgbImage,
    pub heatmap: Option<Heatmap>,
    /// In image coordinates.
    pub joints: Option<JointSet>,
    pub overlay: Option<RgbImage>,
}

impl SampleMaterial {
    /// Reads the sample's image and pose artifacts from disk.
    pub fn load(sample: &Sample, root: &Path, transform: TransformOp) -> Result<Self, PromptError> {
        let io = |path: &Path, e: &dyn fmt::Display| PromptError::Io {
            sample: sample.id.clone(),
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let image_path = resolve_path(root, &sample.image_ref);
        let rgb = image::open(&image_path).map_err(|e| io(&image_path, &e))?.to_rgb8();
        let dims = Dims::new(rgb.height(), rgb.width());
        let mut heatmap = None;
        let mut joints = None;
        let mut overlay = None;
        if let Some(pose) = &sample.pose {
            let hpath = resolve_path(root, &pose.heatmap_ref);
            let h = Heatmap::read(&hpath).map_err(|e| io(&hpath, &e))?;
            joints = Some(match &pose.joints {
                Some(j) => j.clone(),
                None => decode_joints(&h).rescaled(dims),
            });
            if let Some(oref) = &pose.overlay_ref {
                let opath = resolve_path(root, oref);
                overlay = Some(image::open(&opath).map_err(|e| io(&opath, &e))?.to_rgb8());
            }
            heatmap = Some(h);
        }
        let base = Self { sample_id: sample.id.clone(), rgb, heatmap, joints, overlay };
        Ok(base.transformed(transform))
    }

    pub fn transformed(self, op: TransformOp) -> Self {
        if op == TransformOp::None {
            return self;
        }
        Self {
            sample_id: self.sample_id,
            rgb: op.apply_image(&self.rgb),
            heatmap: self.heatmap.map(|h| op.apply_heatmap(&h)),
            joints: self.joints.map(|j| op.apply_joints(&j)),
            overlay: self.overlay.map(|o| op.apply_image(&o)),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.rgb.height(), self.rgb.width())
    }

    pub fn evidence(&self, v: PromptVariant) -> PoseEvidence {
        PoseEvidence {
            joints: self.joints.clone(),
            heatmap: self.heatmap.clone(),
            pose_visible: v.uses_pose(),
        }
    }

    fn missing(&self, what: &str) -> PromptError {
        PromptError::MissingPoseArtifact { sample: self.sample_id.clone(), what: what.into() }
    }

    fn png(&self, img: &RgbImage) -> Result<Blob, PromptError> {
        let bytes = encode_png(img).map_err(|source| PromptError::Pose { sample: self.sample_id.clone(), source })?;
        Ok(Blob::png(img.width(), img.height(), bytes))
    }

    pub fn attachment(&self, kind: AttachmentKind) -> Result<Attachment, PromptError> {
        let content = match kind {
            AttachmentKind::Rgb => AttachmentContent::Image(self.png(&self.rgb)?),
            AttachmentKind::GaussianHeatmap => {
                let h = self.heatmap.as_ref().ok_or_else(|| self.missing("heatmap"))?;
                AttachmentContent::Image(self.png(&heatmap_image(h, self.dims(), Colormap::Inferno))?)
            }
            AttachmentKind::Overlay => match (&self.overlay, &self.heatmap) {
                (Some(o), _) => AttachmentContent::Image(self.png(o)?),
                (None, Some(h)) => {
                    let o = composite_overlay(&self.rgb, h, &OverlayParams::default(), true)
                        .map_err(|source| PromptError::Pose { sample: self.sample_id.clone(), source })?;
                    AttachmentContent::Image(self.png(&o)?)
                }
                (None, None) => return Err(self.missing("heatmap")),
            },
            AttachmentKind::JointImage => {
                let j = self.joints.as_ref().ok_or_else(|| self.missing("joints"))?;
                AttachmentContent::Image(self.png(&joint_image(j))?)
            }
            AttachmentKind::JointText => {
                let j = self.joints.as_ref().ok_or_else(|| self.missing("joints"))?;
                AttachmentContent::Text(joints_to_text(j))
            }
        };
        Ok(Attachment { kind, content })
    }

    pub fn attachments(&self, v: PromptVariant) -> Result<Vec<Attachment>, PromptError> {
        v.attachments().iter().map(|&k| self.attachment(k)).collect()
    }
}

/// Where sample materials come from.
pub trait MaterialSource: Send + Sync {
    fn material(&self, sample: &Sample, op: TransformOp) -> Result<SampleMaterial, PromptError>;
}

/// Reads materials from files relative to a dataset root.
#[derive(Debug, Clone)]
pub struct DiskMaterials {
    pub root: PathBuf,
}

impl DiskMaterials {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl MaterialSource for DiskMaterials {
    fn material(&self, sample: &Sample, op: TransformOp) -> Result<SampleMaterial, PromptError> {
        SampleMaterial::load(sample, &self.root, op)
    }
}

/// Renders prompts for one template set.
#[derive(Debug, Clone)]
pub struct PromptForge {
    pub templates: Arc<TemplateSet>,
}

impl Default for PromptForge {
    fn default() -> Self {
        Self { templates: Arc::new(TemplateSet::builtin()) }
    }
}

impl PromptForge {
    pub fn new(templates: TemplateSet) -> Self {
        Self { templates: Arc::new(templates) }
    }

    pub fn system_prompt(&self, v: PromptVariant) -> String {
        self.templates.system_prompt(v)
    }

    pub fn example_prompt(
        &self,
        v: PromptVariant,
        sample: &Sample,
        material: &SampleMaterial,
    ) -> Result<ExampleTurn, PromptError> {
        if !v.uses_examples() {
            return Err(PromptError::NoExamples(v));
        }
        let ann = sample.annotation.as_ref().ok_or_else(|| PromptError::MissingAnnotation(sample.id.clone()))?;
        let token = ClassToken::for_label(ann.label).ok_or_else(|| PromptError::UnknownLabel(sample.id.clone()))?;
        let defect = defect_phrase(&ann.description, ann.defect);
        let attachments = material.attachments(v)?;
        let instruction = self.templates.render_example(v, ann.label, &sample.motion, &defect)?;
        Ok(ExampleTurn {
            sample_id: sample.id.clone(),
            instruction,
            attachments,
            expected_class: Some(token),
            evidence: Arc::new(material.evidence(v)),
        })
    }

    pub fn query_prompt(&self, v: PromptVariant, sample_id: &str, material: &SampleMaterial) -> Result<ExampleTurn, PromptError> {
        Ok(ExampleTurn {
            sample_id: sample_id.to_string(),
            instruction: self.templates.query_text().to_string(),
            attachments: material.attachments(v)?,
            expected_class: None,
            evidence: Arc::new(material.evidence(v)),
        })
    }
}
