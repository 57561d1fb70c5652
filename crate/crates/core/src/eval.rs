//! Accuracy and cost reporting, and the ablation / sweep runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectionResult, Detector, PartitionReport, SampleError};
use crate::gateway::{write_log, Gateway, LogRecord, Phase, Role, TokenUsage, TurnKind};
use crate::icvl::{learn, select_pool, LearnError, LearnPolicy, LearnSummary};
use crate::model::{DatasetManifest, Label, Split};
use crate::pose::TransformOp;
use crate::prompt::{MaterialSource, PromptForge, PromptVariant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground truth for sample {0}")]
    MissingTruth(String),
    #[error("incomplete session logs: {0}")]
    IncompleteLogs(String),
    #[error("invalid matrix spec: {0}")]
    Spec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Prediction counts for one ground-truth class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub predicted_correct: usize,
    pub predicted_hallucinated: usize,
    pub unparseable: usize,
}

impl ConfusionRow {
    pub fn total(&self) -> usize {
        self.predicted_correct + self.predicted_hallucinated + self.unparseable
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub truth_correct: ConfusionRow,
    pub truth_hallucinated: ConfusionRow,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.truth_correct.total() + self.truth_hallucinated.total()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub overall_accuracy: f64,
    /// Keyed by `correct` and `hallucinated`.
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub confusion: Confusion,
    pub unparseable: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores detection results against the manifest's labels. Unparseable
/// replies count as wrong.
pub fn evaluate(results: &[DetectionResult], truth: &DatasetManifest) -> Result<EvalReport, EvalError> {
    let mut confusion = Confusion::default();
    for r in results {
        let label = truth.get(&r.sample_id).map(|s| s.label()).unwrap_or(Label::Unknown);
        let row = match label {
            Label::Correct => &mut confusion.truth_correct,
            Label::Hallucinated => &mut confusion.truth_hallucinated,
            Label::Unknown => return Err(EvalError::MissingTruth(r.sample_id.clone())),
        };
        match r.predicted {
            Some(Label::Correct) => row.predicted_correct += 1,
            Some(_) => row.predicted_hallucinated += 1,
            None => row.unparseable += 1,
        }
    }
    let (c, h) = (confusion.truth_correct, confusion.truth_hallucinated);
    let n = confusion.total();
    let per_class_accuracy = BTreeMap::from([
        ("correct".to_string(), ratio(c.predicted_correct, c.total())),
        ("hallucinated".to_string(), ratio(h.predicted_hallucinated, h.total())),
    ]);
    Ok(EvalReport {
        n_test: n,
        overall_accuracy: ratio(c.predicted_correct + h.predicted_hallucinated, n),
        per_class_accuracy,
        confusion,
        unparseable: c.unparseable + h.unparseable,
    })
}

/// Reference cost of labeling by hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManualBaseline {
    pub seconds_per_infer: f64,
    pub tokens_per_infer: u64,
}

impl Default for ManualBaseline {
    fn default() -> Self {
        Self { seconds_per_infer: 45.0, tokens_per_infer: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    /// Tokens added to every inference on top of the logged usage.
    pub overhead_per_infer: u64,
    pub baseline: ManualBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n_infer: usize,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub overhead_per_infer: u64,
    pub tokens_per_infer: f64,
    pub wall_time_per_infer: f64,
    pub total_wall_time: f64,
    /// Usage spent building the learned session, not part of the per-infer cost.
    pub learning: TokenUsage,
    pub baseline: ManualBaseline,
}

/// Cost of detection calls recorded in session logs.
pub fn cost_report(records: &[LogRecord], cfg: &CostConfig) -> Result<CostReport, EvalError> {
    let mut detect = TokenUsage::default();
    let mut learning = TokenUsage::default();
    let (mut queries, mut replies) = (0usize, 0usize);
    for r in records {
        match r.phase {
            Phase::Detect => {
                detect += r.usage;
                match r.role {
                    Role::User if r.turn == TurnKind::Query => queries += 1,
                    Role::Assistant => replies += 1,
                    _ => {}
                }
            }
            Phase::Learn => learning += r.usage,
        }
    }
    if queries != replies {
        return Err(EvalError::IncompleteLogs(format!("{queries} detection queries but {replies} replies")));
    }
    let n = replies;
    let total = detect.input_tokens + detect.output_tokens + cfg.overhead_per_infer * n as u64;
    Ok(CostReport {
        n_infer: n,
        total_input_tokens: detect.input_tokens,
        total_output_tokens: detect.output_tokens,
        overhead_per_infer: cfg.overhead_per_infer,
        tokens_per_infer: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        wall_time_per_infer: if n == 0 { 0.0 } else { detect.wall_time / n as f64 },
        total_wall_time: detect.wall_time,
        learning,
        baseline: cfg.baseline,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMatrixSpec {
    pub variants: Vec<PromptVariant>,
    pub shots_per_class: Vec<usize>,
    pub transforms: Vec<TransformOp>,
    pub backends: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: LearnPolicy,
    #[serde(default)]
    pub cost: CostConfig,
}

impl RunMatrixSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (axis, empty) in [
            ("variants", self.variants.is_empty()),
            ("shots_per_class", self.shots_per_class.is_empty()),
            ("transforms", self.transforms.is_empty()),
            ("backends", self.backends.is_empty()),
        ] {
            if empty {
                return Err(EvalError::Spec(format!("{axis} must not be empty")));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for backend in &self.backends {
            for &variant in &self.variants {
                for &shots in &self.shots_per_class {
                    for &transform in &self.transforms {
                        out.push(CellKey { backend: backend.clone(), variant, shots, transform });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub backend: String,
    pub variant: PromptVariant,
    pub shots: usize,
    pub transform: TransformOp,
}

impl CellKey {
    pub fn slug(&self) -> String {
        format!("{}_{}_n{}_{}", self.backend, self.variant, self.shots, self.transform)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: CellKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn: Option<LearnSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_errors: Vec<SampleError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub spec: RunMatrixSpec,
    pub template_version: String,
    pub cells: Vec<CellReport>,
}

/// Everything one matrix cell produces.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub report: CellReport,
    pub results: Vec<DetectionResult>,
    pub learn_records: Vec<LogRecord>,
    pub detect_records: Vec<LogRecord>,
}

/// Learns, detects and scores one configuration.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    key: &CellKey,
    gateway: &Gateway,
    forge: &PromptForge,
    materials: &dyn MaterialSource,
    dataset: &DatasetManifest,
    policy: &LearnPolicy,
    cost: &CostConfig,
    seed: u64,
) -> CellRun {
    let mut run = CellRun {
        report: CellReport {
            key: key.clone(),
            learn: None,
            eval: None,
            cost: None,
            partition: None,
            sample_errors: Vec::new(),
            error: None,
        },
        results: Vec::new(),
        learn_records: Vec::new(),
        detect_records: Vec::new(),
    };
    let mut candidates: Vec<_> = dataset.split(Split::ExamplePool).collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pool = select_pool(candidates, key.shots);
    let outcome = match learn(gateway, forge, materials, key.variant, &pool, policy, &key.slug()) {
        Ok(o) => o,
        Err(e) => {
            if let Some(partial) = e.outcome() {
                run.report.learn = Some(partial.summary());
                run.learn_records = partial.session.log_records();
            }
            run.report.error = Some(match &e {
                LearnError::Exhausted { .. } | LearnError::Backend { .. } => format!("learn failed: {e}"),
                _ => format!("learn could not start: {e}"),
            });
            return run;
        }
    };
    run.report.learn = Some(outcome.summary());
    run.learn_records = outcome.session.log_records();
    let tests: Vec<_> = dataset.split(Split::Test).filter(|s| s.label().is_known()).collect();
    let detector = Detector { gateway, forge, materials, transform: key.transform };
    let batch = match detector.batch_detect(&outcome.session, &tests, false) {
        Ok(b) => b,
        Err(e) => {
            run.report.error = Some(format!("detection failed: {e}"));
            return run;
        }
    };
    run.report.sample_errors = batch.errors;
    run.report.partition = Some(batch.partition);
    run.detect_records = batch.records;
    match evaluate(&batch.results, dataset) {
        Ok(r) => run.report.eval = Some(r),
        Err(e) => run.report.error = Some(e.to_string()),
    }
    let all: Vec<LogRecord> = run.learn_records.iter().chain(&run.detect_records).cloned().collect();
    match cost_report(&all, cost) {
        Ok(c) => run.report.cost = Some(c),
        Err(e) => run.report.error = Some(e.to_string()),
    }
    run.results = batch.results;
    run
}

/// Runs every cell of `spec`. Cells whose backend id has no gateway are
/// reported as failed; the rest run concurrently. When `out_dir` is given,
/// per-cell logs, results and CSV files plus the consolidated report are
/// written there.
pub fn run_matrix(
    spec: &RunMatrixSpec,
    dataset: &DatasetManifest,
    gateways: &[Gateway],
    forge: &PromptForge,
    materials: &dyn MaterialSource,
    out_dir: Option<&Path>,
) -> Result<MatrixReport, EvalError> {
    spec.validate()?;
    let cells = spec.cells();
    let runs: Vec<CellRun> = cells
        .par_iter()
        .map(|key| match gateways.iter().find(|g| g.id() == key.backend) {
            Some(gw) => run_cell(key, gw, forge, materials, dataset, &spec.policy, &spec.cost, spec.seed),
            None => CellRun {
                report: CellReport {
                    key: key.clone(),
                    learn: None,
                    eval: None,
                    cost: None,
                    partition: None,
                    sample_errors: Vec::new(),
                    error: Some(format!("unknown backend {}", key.backend)),
                },
                results: Vec::new(),
                learn_records: Vec::new(),
                detect_records: Vec::new(),
            },
        })
        .collect();
    let report = MatrixReport {
        spec: spec.clone(),
        template_version: forge.templates.version.clone(),
        cells: runs.iter().map(|r| r.report.clone()).collect(),
    };
    if let Some(dir) = out_dir {
        write_matrix_artifacts(dir, &report, &runs, dataset)?;
    }
    Ok(report)
}

fn write_matrix_artifacts(
    dir: &Path,
    report: &MatrixReport,
    runs: &[CellRun],
    dataset: &DatasetManifest,
) -> Result<(), EvalError> {
    for run in runs {
        let cell = dir.join("cells").join(run.report.key.slug());
        fs::create_dir_all(&cell)?;
        let io = |e: crate::gateway::GatewayError| std::io::Error::other(e.to_string());
        write_log(&cell.join("learn.ndjson"), &run.learn_records).map_err(io)?;
        write_log(&cell.join("detect.ndjson"), &run.detect_records).map_err(io)?;
        fs::write(cell.join("results.json"), to_json(&run.results))?;
        fs::write(cell.join("report.json"), to_json(&run.report))?;
        fs::write(cell.join("results.csv"), results_csv(&run.results, dataset))?;
    }
    fs::write(dir.join("report.json"), to_json(report))?;
    fs::write(dir.join("report.txt"), render_matrix(report))?;
    Ok(())
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per result: id, truth, prediction, token, usage and latency.
pub fn results_csv(results: &[DetectionResult], truth: &DatasetManifest) -> String {
    let mut out = String::from("sample_id,truth,predicted,class_token,input_tokens,output_tokens,latency\n");
    for r in results {
        let label = |l: Option<Label>| match l {
            Some(Label::Correct) => "correct",
            Some(Label::Hallucinated) => "hallucinated",
            _ => "",
        };
        let t = truth.get(&r.sample_id).map(|s| s.label());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.sample_id),
            label(t),
            label(r.predicted),
            r.class_token.map_or("", |t| t.as_str()),
            r.usage.input_tokens,
            r.usage.output_tokens,
            r.latency
        );
    }
    out
}

/// Whole-number percentage as printed in report tables.
pub fn percent(x: f64) -> String {
    format!("{:.0}%", x * 100.0)
}

/// Aligned plain-text table with a rule under the header.
pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = headers.iter().map(|h| width(h)).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(width(cell));
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str(" | ");
            }
            s.push_str(c);
            if i + 1 < cells.len() {
                s.extend(std::iter::repeat_n(' ', w - width(c)));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(headers);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule).replace(" | ", "-+-"));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn accuracy_of(report: &MatrixReport, key: &CellKey) -> String {
    report
        .cells
        .iter()
        .find(|c| &c.key == key)
        .and_then(|c| c.eval.as_ref())
        .map_or_else(|| "n/a".to_string(), |e| percent(e.overall_accuracy))
}

/// Accuracy per variant (rows) and backend (columns).
pub fn render_variant_table(report: &MatrixReport, shots: usize, transform: TransformOp) -> String {
    let mut headers = vec!["Model".to_string()];
    headers.extend(report.spec.backends.iter().cloned());
    let rows: Vec<Vec<String>> = report
        .spec
        .variants
        .iter()
        .map(|&v| {
            let mut row = vec![v.to_string()];
            for b in &report.spec.backends {
                row.push(accuracy_of(report, &CellKey { backend: b.clone(), variant: v, shots, transform }));
            }
            row
        })
        .collect();
    render_table(&headers, &rows)
}

/// Accuracy per backend (rows) and shots per class (columns).
pub fn render_shots_table(report: &MatrixReport, variant: PromptVariant, transform: TransformOp) -> String {
    let mut headers = vec![format!("Model ({variant})")];
    headers.extend(report.spec.shots_per_class.iter().map(|n| format!("N={n}")));
    let rows: Vec<Vec<String>> = report
        .spec
        .backends
        .iter()
        .map(|b| {
            let mut row = vec![b.clone()];
            for &shots in &report.spec.shots_per_class {
                row.push(accuracy_of(report, &CellKey { backend: b.clone(), variant, shots, transform }));
            }
            row
        })
        .collect();
    render_table(&headers, &rows)
}

/// Accuracy per backend (rows) and transform (columns).
pub fn render_transform_table(report: &MatrixReport, variant: PromptVariant, shots: usize) -> String {
    let mut headers = vec![format!("Model ({variant})")];
    headers.extend(report.spec.transforms.iter().map(|t| t.title().to_string()));
    let rows: Vec<Vec<String>> = report
        .spec
        .backends
        .iter()
        .map(|b| {
            let mut row = vec![b.clone()];
            for &transform in &report.spec.transforms {
                row.push(accuracy_of(report, &CellKey { backend: b.clone(), variant, shots, transform }));
            }
            row
        })
        .collect();
    render_table(&headers, &rows)
}

/// Per-inference cost of the pipeline next to the manual baseline.
pub fn render_cost_table(label: &str, cost: &CostReport) -> String {
    let headers: Vec<String> = ["Method", "Subject", "Cost per infer"].map(String::from).to_vec();
    let manual = if cost.baseline.tokens_per_infer == 0 {
        format!("None & {:.0} sec", cost.baseline.seconds_per_infer)
    } else {
        format!("{} tokens & {:.0} sec", cost.baseline.tokens_per_infer, cost.baseline.seconds_per_infer)
    };
    let rows = vec![
        vec![
            label.to_string(),
            "Computer".into(),
            format!("{:.0} tokens & {:.0} sec", cost.tokens_per_infer, cost.wall_time_per_infer),
        ],
        vec!["Manual".into(), "Human".into(), manual],
    ];
    render_table(&headers, &rows)
}

/// Full text report: one listing of every cell, then the sweep tables
/// that apply to the matrix axes.
pub fn render_matrix(report: &MatrixReport) -> String {
    let spec = &report.spec;
    let mut out = String::new();
    let headers: Vec<String> = [
        "Backend", "Model", "N", "Transform", "Accuracy", "Correct", "Halluc.", "Unparseable", "Tokens/infer", "Sec/infer",
        "Status",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            let e = c.eval.as_ref();
            let pc = |k: &str| e.map_or("n/a".into(), |e| percent(e.per_class_accuracy[k]));
            vec![
                c.key.backend.clone(),
                c.key.variant.to_string(),
                c.key.shots.to_string(),
                c.key.transform.title().to_string(),
                e.map_or("n/a".into(), |e| percent(e.overall_accuracy)),
                pc("correct"),
                pc("hallucinated"),
                e.map_or("n/a".into(), |e| e.unparseable.to_string()),
                c.cost.as_ref().map_or("n/a".into(), |c| format!("{:.0}", c.tokens_per_infer)),
                c.cost.as_ref().map_or("n/a".into(), |c| format!("{:.1}", c.wall_time_per_infer)),
                c.error.clone().unwrap_or_else(|| "ok".into()),
            ]
        })
        .collect();
    let _ = writeln!(out, "Cells (templates {})\n", report.template_version);
    out.push_str(&render_table(&headers, &rows));
    if spec.variants.len() > 1 {
        for &shots in &spec.shots_per_class {
            for &t in &spec.transforms {
                let _ = writeln!(out, "\nAccuracy by model (N={shots}, {})\n", t.title());
                out.push_str(&render_variant_table(report, shots, t));
            }
        }
    }
    if spec.shots_per_class.len() > 1 {
        for &v in &spec.variants {
            for &t in &spec.transforms {
                let _ = writeln!(out, "\nAccuracy by number of examples per class ({})\n", t.title());
                out.push_str(&render_shots_table(report, v, t));
            }
        }
    }
    if spec.transforms.len() > 1 {
        for &v in &spec.variants {
            for &shots in &spec.shots_per_class {
                let _ = writeln!(out, "\nAccuracy by image transform (N={shots})\n");
                out.push_str(&render_transform_table(report, v, shots));
            }
        }
    }
    for c in &report.cells {
        if let Some(cost) = &c.cost {
            let _ = writeln!(out, "\nCost ({})\n", c.key.slug());
            out.push_str(&render_cost_table(&format!("ICVL {}", c.key.variant), cost));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Annotation, Sample, MANIFEST_VERSION};
    use crate::model::ClassToken;

    fn manifest(n_c: usize, n_h: usize) -> DatasetManifest {
        let mk = |i: usize, label: Label| Sample {
            id: format!("s{i:03}"),
            image_ref: "x.png".into(),
            motion: "kicking".into(),
            annotation: Some(Annotation::new(label, "three legs", "t")),
            pose: None,
            split: Split::Test,
        };
        let samples = (0..n_c)
            .map(|i| mk(i, Label::Correct))
            .chain((n_c..n_c + n_h).map(|i| mk(i, Label::Hallucinated)))
            .collect();
        DatasetManifest { version: MANIFEST_VERSION, samples, provenance: String::new() }
    }

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
    fn perfect_run() {
        let m = manifest(60, 60);
        let rs: Vec<_> = m
            .samples
            .iter()
            .map(|s| result(&s.id, ClassToken::for_label(s.label())))
            .collect();
        let r = evaluate(&rs, &m).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.confusion.truth_correct.predicted_correct, 60);
        assert_eq!(r.confusion.truth_hallucinated.predicted_hallucinated, 60);
        assert_eq!(r.confusion.total(), 120);
    }

    #[test]
    fn constant_classifier_on_balanced_set() {
        let m = manifest(60, 60);
        let rs: Vec<_> = m.samples.iter().map(|s| result(&s.id, Some(ClassToken::H))).collect();
        let r = evaluate(&rs, &m).unwrap();
        assert_eq!(r.overall_accuracy, 0.5);
        assert_eq!(r.per_class_accuracy["correct"], 0.0);
        assert_eq!(r.per_class_accuracy["hallucinated"], 1.0);
    }

    #[test]
    fn unparseable_counts_as_wrong() {
        let m = manifest(1, 1);
        let rs = vec![result("s000", None), result("s001", Some(ClassToken::H))];
        let r = evaluate(&rs, &m).unwrap();
        assert_eq!(r.overall_accuracy, 0.5);
        assert_eq!(r.unparseable, 1);
        assert_eq!(r.confusion.truth_correct.unparseable, 1);
    }

    #[test]
    fn missing_truth() {
        let m = manifest(1, 0);
        assert!(matches!(evaluate(&[result("zzz", None)], &m), Err(EvalError::MissingTruth(id)) if id == "zzz"));
    }

    #[test]
    fn empty_cost_report() {
        let r = cost_report(&[], &CostConfig::default()).unwrap();
        assert_eq!((r.n_infer, r.total_input_tokens, r.total_output_tokens), (0, 0, 0));
        assert_eq!(r.tokens_per_infer, 0.0);
    }

    #[test]
    fn table_alignment() {
        let t = render_table(
            &["a".into(), "long header".into()],
            &[vec!["xyz".into(), "1".into()], vec!["0.5π".into(), "22".into()]],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "a    | long header");
        assert_eq!(lines[1], "-----+------------");
        assert_eq!(lines[3], "0.5π | 22");
    }

    #[test]
    fn percent_rounds() {
        assert_eq!(percent(0.78), "78%");
        assert_eq!(percent(94.0 / 120.0), "78%");
        assert_eq!(percent(1.0), "100%");
    }
}
