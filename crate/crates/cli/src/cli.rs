//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use toonscan_core::config::AppConfig;
use toonscan_core::eval::{render_cost_table, to_json, RunMatrixSpec};
use toonscan_core::gateway::network;
use toonscan_core::model::{load_manifest, write_manifest_atomic, DatasetManifest, PoseArtifacts, Sample, Split};
use toonscan_core::pose::{
    composite_overlay, decode_joints, encode_png, joints_from_text, joints_to_text, render_heatmap, Heatmap, TransformOp,
};
use toonscan_core::prompt::{PromptVariant, SampleMaterial};
use toonscan_core::synth::{self, SynthSpec};

use crate::server::{self, AppState};
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "toonscan", version, about = "Structural hallucination detection for cartoon character images")]
pub struct Cli {
    /// JSON config file for backends, pose defaults, census and cost.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long, global = true, default_value = "manifest.json")]
    pub manifest: PathBuf,
    /// Run to create or read under the runs directory.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adds a directory of PNG images, and optional `<id>.pkhm` heatmaps, to a manifest as unlabeled samples.
    Ingest {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        #[arg(long, default_value = "unknown")]
        motion: String,
        /// Manifest to create or extend; defaults to --manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Heatmap and keypoint utilities.
    #[command(subcommand)]
    Pose(PoseCommand),
    /// Prompt inspection.
    #[command(subcommand)]
    Prompt(PromptCommand),
    /// Builds a learned session from the example pool.
    Learn {
        #[arg(long, default_value = "mock")]
        backend: String,
        #[arg(long, default_value_t = PromptVariant::FINAL)]
        variant: PromptVariant,
        #[arg(long, default_value_t = 5)]
        shots: usize,
    },
    /// Classifies every test and unlabeled sample with a learned run.
    Detect {
        #[arg(long, default_value_t = TransformOp::None)]
        transform: TransformOp,
        #[arg(long)]
        fail_fast: bool,
    },
    /// Scores a run against the manifest labels.
    Eval,
    /// Token and time cost of a run.
    Cost,
    /// Runs a sweep of variants, shot counts, transforms and backends.
    Matrix {
        #[arg(long)]
        spec: PathBuf,
        /// Replaces the backend list from the matrix file; repeatable.
        #[arg(long)]
        backend: Vec<String>,
        /// Output directory; defaults to the runs directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a transformed copy of a sample's image and pose artifacts.
    Transform {
        #[arg(long)]
        sample: String,
        #[arg(long)]
        op: TransformOp,
        #[arg(long)]
        out: PathBuf,
    },
    /// Starts the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Built UI bundle to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Writes a run's results as CSV, with overrides applied in the last column.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generates the synthetic fixture dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum PoseCommand {
    /// Heatmap to keypoint text document.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keypoint text document to heatmap.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config's pose sigma.
        #[arg(long)]
        sigma: Option<f64>,
        /// Heatmap height; defaults to the keypoint document's.
        #[arg(long)]
        height: Option<u32>,
        #[arg(long)]
        width: Option<u32>,
    },
    /// Blends a heatmap over an image.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config's overlay alpha.
        #[arg(long)]
        alpha: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TurnChoice {
    System,
    Example,
    Query,
}

#[derive(Debug, Subcommand)]
pub enum PromptCommand {
    /// Prints the system prompt or a sample's example or query turn.
    Render {
        #[arg(long, default_value_t = PromptVariant::FINAL)]
        variant: PromptVariant,
        #[arg(long, value_enum, default_value_t = TurnChoice::Query)]
        turn: TurnChoice,
        #[arg(long)]
        sample: Option<String>,
        #[arg(long, default_value_t = TransformOp::None)]
        transform: TransformOp,
    },
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on operational failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    network::init_from_env();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            let _ = Cli::command().error(clap::error::ErrorKind::MissingRequiredArgument, e).print();
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// A missing argument that clap cannot check on its own.
#[derive(Debug)]
struct UsageError(&'static str);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

impl std::error::Error for UsageError {}

struct Ctx {
    manifest: PathBuf,
    config: Option<PathBuf>,
    run_id: Option<String>,
    format: Format,
}

impl Ctx {
    fn config(&self) -> Result<AppConfig> {
        match &self.config {
            Some(p) => Ok(AppConfig::load(p)?),
            None => Ok(AppConfig::default()),
        }
    }

    fn workspace(&self) -> Result<Workspace> {
        let ws = Workspace::open(self.config()?, &self.manifest)
            .with_context(|| format!("cannot open manifest {}", self.manifest.display()))?;
        Ok(ws)
    }

    fn run_id(&self) -> Result<&str> {
        self.run_id.as_deref().ok_or_else(|| UsageError("--run-id is required for this command").into())
    }

    /// Prints `value` as JSON or `text` depending on `--format`.
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        let out = match self.format {
            Format::Json => to_json(value),
            Format::Text => {
                let mut t = text();
                if !t.ends_with('\n') {
                    t.push('\n');
                }
                t
            }
        };
        std::io::stdout().write_all(out.as_bytes())?;
        Ok(())
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx { manifest: cli.manifest, config: cli.config, run_id: cli.run_id, format: cli.format };
    match cli.command {
        Command::Ingest { images, heatmaps, motion, out } => {
            let out = out.unwrap_or_else(|| ctx.manifest.clone());
            let added = ingest(&images, heatmaps.as_deref(), &motion, &out)?;
            ctx.emit(&json!({"manifest": out, "added": added}), || {
                format!("added {} samples to {}", added.len(), out.display())
            })
        }
        Command::Pose(cmd) => pose(&ctx, cmd),
        Command::Prompt(PromptCommand::Render { variant, turn, sample, transform }) => {
            prompt_render(&ctx, variant, turn, sample.as_deref(), transform)
        }
        Command::Learn { backend, variant, shots } => {
            let ws = ctx.workspace()?;
            let run_id = match &ctx.run_id {
                Some(r) => r.clone(),
                None => format!("run-{}", &uuid::Uuid::new_v4().simple().to_string()[..8]),
            };
            let s = ws.learn(&run_id, &backend, variant, shots)?;
            ctx.emit(&json!({"run_id": run_id, "summary": s}), || {
                let mut t = format!(
                    "run {run_id}: {} on {} with variant {} ({} verified examples, {} input / {} output tokens)",
                    s.state,
                    s.backend,
                    s.variant,
                    s.verified.len(),
                    s.usage.input_tokens,
                    s.usage.output_tokens
                );
                if !s.flagged.is_empty() {
                    t.push_str(&format!("\nflagged: {}", s.flagged.join(", ")));
                }
                t
            })
        }
        Command::Detect { transform, fail_fast } => {
            let ws = ctx.workspace()?;
            let run_id = ctx.run_id()?;
            let s = ws.detect(run_id, transform, fail_fast)?;
            ctx.emit(&s, || {
                let mut t = format!(
                    "run {run_id}: {} results ({} clean, {} hallucinated, {} unparseable)",
                    s.n_results,
                    s.partition.clean.len(),
                    s.partition.hallucinated.len(),
                    s.partition.unparseable.len()
                );
                for e in &s.errors {
                    t.push_str(&format!("\nsample {}: {}", e.sample_id, e.message));
                }
                t
            })
        }
        Command::Eval => {
            let ws = ctx.workspace()?;
            let run_id = ctx.run_id()?;
            let r = ws.evaluate(run_id)?;
            ctx.emit(&r, || {
                let c = &r.confusion;
                format!(
                    "run {run_id}: accuracy {:.4} over {} samples\n\
                     correct: {:.4}  hallucinated: {:.4}  unparseable: {}\n\
                     truth correct      -> C {} / H {} / ? {}\n\
                     truth hallucinated -> C {} / H {} / ? {}",
                    r.overall_accuracy,
                    r.n_test,
                    r.per_class_accuracy.get("correct").copied().unwrap_or(0.0),
                    r.per_class_accuracy.get("hallucinated").copied().unwrap_or(0.0),
                    r.unparseable,
                    c.truth_correct.predicted_correct,
                    c.truth_correct.predicted_hallucinated,
                    c.truth_correct.unparseable,
                    c.truth_hallucinated.predicted_correct,
                    c.truth_hallucinated.predicted_hallucinated,
                    c.truth_hallucinated.unparseable,
                )
            })
        }
        Command::Cost => {
            let ws = ctx.workspace()?;
            let run_id = ctx.run_id()?;
            let r = ws.cost(run_id)?;
            let label = ws.learn_summary(run_id).map(|s| format!("ICVL {}", s.variant)).unwrap_or_else(|_| "ICVL".into());
            ctx.emit(&r, || render_cost_table(&label, &r))
        }
        Command::Matrix { spec, backend, out } => {
            let ws = ctx.workspace()?;
            let text = fs::read_to_string(&spec).with_context(|| format!("cannot read {}", spec.display()))?;
            let mut spec: RunMatrixSpec =
                serde_json::from_str(&text).with_context(|| format!("malformed matrix spec {}", spec.display()))?;
            if !backend.is_empty() {
                spec.backends = backend;
            }
            let out = match (out, &ctx.run_id) {
                (Some(o), _) => o,
                (None, Some(r)) => ws.run_dir(r)?,
                (None, None) => ws.runs_dir.join(format!("matrix-{}", chrono::Utc::now().format("%Y%m%dT%H%M%S"))),
            };
            let report = ws.matrix(&spec, &out)?;
            let failed: Vec<_> = report.cells.iter().filter_map(|c| c.error.as_ref().map(|e| (c.key.slug(), e))).collect();
            let path = out.join("report.txt");
            let summary = json!({
                "report": path,
                "report_json": out.join("report.json"),
                "cells": report.cells.len(),
                "failed_cells": failed.len(),
                "network_calls": network::attempted_calls(),
            });
            ctx.emit(&summary, || path.display().to_string())?;
            if let Some((slug, e)) = failed.first() {
                bail!("{} of {} cells failed, first {slug}: {e}", failed.len(), report.cells.len());
            }
            Ok(())
        }
        Command::Transform { sample, op, out } => {
            let ws = ctx.workspace()?;
            let s = ws.sample(&sample)?;
            let written = transform_sample(&s, ws.store.root(), op, &out)?;
            ctx.emit(&json!({"sample": sample, "op": op, "files": written}), || {
                written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n")
            })
        }
        Command::Serve { addr, ui_dir } => {
            let state = AppState::new(ctx.workspace()?)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(state, addr, ui_dir))
        }
        Command::Export { out } => {
            let ws = ctx.workspace()?;
            let csv = ws.export_csv(ctx.run_id()?)?;
            match out {
                Some(p) => {
                    fs::write(&p, &csv).with_context(|| format!("cannot write {}", p.display()))?;
                    ctx.emit(&json!({"csv": p}), || p.display().to_string())
                }
                None => {
                    std::io::stdout().write_all(csv.as_bytes())?;
                    Ok(())
                }
            }
        }
        Command::Synth { out, seed } => {
            let path = synth::generate(&out, &SynthSpec { seed, ..Default::default() })?;
            ctx.emit(&json!({"manifest": path}), || path.display().to_string())
        }
    }
}

fn pose(ctx: &Ctx, cmd: PoseCommand) -> Result<()> {
    match cmd {
        PoseCommand::Decode { input, out } => {
            let h = Heatmap::read(&input).with_context(|| format!("cannot read heatmap {}", input.display()))?;
            let joints = decode_joints(&h);
            let text = joints_to_text(&joints);
            match out {
                Some(p) => {
                    fs::write(&p, &text).with_context(|| format!("cannot write {}", p.display()))?;
                    ctx.emit(&json!({"joints": p}), || p.display().to_string())
                }
                None => ctx.emit(&joints, || text),
            }
        }
        PoseCommand::Render { input, out, sigma, height, width } => {
            let text = fs::read_to_string(&input).with_context(|| format!("cannot read {}", input.display()))?;
            let joints = joints_from_text(&text).with_context(|| format!("malformed keypoints {}", input.display()))?;
            let mut dims = joints.source_dims;
            if let Some(h) = height {
                dims.height = h;
            }
            if let Some(w) = width {
                dims.width = w;
            }
            let joints = if dims == joints.source_dims { joints } else { joints.rescaled(dims) };
            let sigma = match sigma {
                Some(s) => s,
                None => ctx.config()?.pose.sigma,
            };
            let h = render_heatmap(&joints, sigma, dims)?;
            h.write(&out).with_context(|| format!("cannot write {}", out.display()))?;
            ctx.emit(&json!({"heatmap": out, "height": dims.height, "width": dims.width}), || out.display().to_string())
        }
        PoseCommand::Overlay { image, heatmap, out, alpha } => {
            let mut params = ctx.config()?.pose.overlay;
            if let Some(a) = alpha {
                params.alpha = a;
            }
            let rgb = image::open(&image).with_context(|| format!("cannot read image {}", image.display()))?.to_rgb8();
            let h = Heatmap::read(&heatmap).with_context(|| format!("cannot read heatmap {}", heatmap.display()))?;
            let img = composite_overlay(&rgb, &h, &params, true)?;
            fs::write(&out, encode_png(&img)?).with_context(|| format!("cannot write {}", out.display()))?;
            ctx.emit(&json!({"overlay": out}), || out.display().to_string())
        }
    }
}

fn prompt_render(
    ctx: &Ctx,
    variant: PromptVariant,
    turn: TurnChoice,
    sample: Option<&str>,
    transform: TransformOp,
) -> Result<()> {
    let config = ctx.config()?;
    let templates = match &config.templates_dir {
        Some(d) => toonscan_core::prompt::TemplateSet::load_dir(d)?,
        None => toonscan_core::prompt::TemplateSet::builtin(),
    };
    let forge = toonscan_core::prompt::PromptForge::new(templates);
    if turn == TurnChoice::System {
        let text = forge.system_prompt(variant);
        return ctx.emit(&json!({"variant": variant, "system": text}), || text.clone());
    }
    let ws = ctx.workspace()?;
    let id = sample.ok_or(UsageError("--sample is required for example and query turns"))?;
    let s = ws.sample(id)?;
    let m = SampleMaterial::load(&s, ws.store.root(), transform)?;
    let t = match turn {
        TurnChoice::Example => forge.example_prompt(variant, &s, &m)?,
        _ => forge.query_prompt(variant, id, &m)?,
    };
    let kinds: Vec<&str> = t.attachment_kinds().iter().map(|k| k.name()).collect();
    let value = json!({
        "variant": variant,
        "sample_id": t.sample_id,
        "attachments": kinds,
        "instruction": t.instruction,
        "expected_class": t.expected_class.map(|c| c.as_str()),
    });
    ctx.emit(&value, || format!("[attachments: {}]\n{}", kinds.join(", "), t.instruction))
}

/// Writes `<id>_<op>.png`, and for posed samples `.pkhm` and `.txt`
/// keypoints, into `out`.
fn transform_sample(s: &Sample, root: &Path, op: TransformOp, out: &Path) -> Result<Vec<PathBuf>> {
    let m = SampleMaterial::load(s, root, op)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let stem = format!("{}_{}", s.id, op.name());
    let mut written = vec![out.join(format!("{stem}.png"))];
    fs::write(&written[0], encode_png(&m.rgb)?)?;
    if let Some(h) = &m.heatmap {
        let p = out.join(format!("{stem}.pkhm"));
        h.write(&p)?;
        written.push(p);
    }
    if let Some(j) = &m.joints {
        let p = out.join(format!("{stem}.txt"));
        fs::write(&p, joints_to_text(j))?;
        written.push(p);
    }
    Ok(written)
}

fn relative_to(path: &Path, root: &Path) -> Result<PathBuf> {
    let abs = path.canonicalize().with_context(|| format!("cannot resolve {}", path.display()))?;
    Ok(abs.strip_prefix(root).map(Path::to_path_buf).unwrap_or(abs))
}

/// Appends one unlabeled sample per image in `images` to the manifest at
/// `out`. Ids are file stems; ids already present are skipped. The manifest
/// is left unchanged when the result fails validation.
pub fn ingest(images: &Path, heatmaps: Option<&Path>, motion: &str, out: &Path) -> Result<Vec<String>> {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let root = dir.canonicalize()?;
    let previous = fs::read(out).ok();
    let mut manifest = match &previous {
        Some(_) => load_manifest(out)?.manifest,
        None => DatasetManifest::default(),
    };
    let mut files: Vec<PathBuf> = fs::read_dir(images)
        .with_context(|| format!("cannot list {}", images.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    let mut added = Vec::new();
    for path in files {
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else { continue };
        if manifest.get(&id).is_some() {
            continue;
        }
        let pose = match heatmaps.map(|d| d.join(format!("{id}.pkhm"))).filter(|p| p.is_file()) {
            Some(h) => Some(PoseArtifacts { heatmap_ref: relative_to(&h, &root)?, joints: None, overlay_ref: None }),
            None => None,
        };
        manifest.samples.push(Sample {
            id: id.clone(),
            image_ref: relative_to(&path, &root)?,
            motion: motion.to_string(),
            annotation: None,
            pose,
            split: Split::Unlabeled,
        });
        added.push(id);
    }
    write_manifest_atomic(out, &manifest)?;
    if let Err(e) = load_manifest(out) {
        match previous {
            Some(bytes) => fs::write(out, bytes)?,
            None => fs::remove_file(out)?,
        }
        return Err(e.into());
    }
    Ok(added)
}
