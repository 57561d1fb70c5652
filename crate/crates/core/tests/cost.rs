mod common;

use common::{fixture, read_fixture, FixedMaterials};
use toonscan_core::detector::Detector;
use toonscan_core::eval::{cost_report, render_cost_table, CostConfig, EvalError};
use toonscan_core::gateway::{read_log, write_log, BackendConfig, Gateway, LogRecord, Role};
use toonscan_core::icvl::{learn, select_pool, LearnPolicy};
use toonscan_core::model::Split;
use toonscan_core::pose::TransformOp;
use toonscan_core::prompt::{PromptForge, PromptVariant, TemplateSet};

fn run(forge: &PromptForge) -> (Vec<LogRecord>, Vec<LogRecord>) {
    let fx = fixture();
    let mut cfg = BackendConfig::mock();
    cfg.mock.reply_tokens = Some(140);
    let gw = Gateway::from_config(cfg);
    let pool = select_pool(fx.manifest.split(Split::ExamplePool), 5);
    let out = learn(&gw, forge, &fx.materials(), PromptVariant::D5, &pool, &LearnPolicy::default(), "cost").unwrap();
    let materials = FixedMaterials::standing();
    let det = Detector { gateway: &gw, forge, materials: &materials, transform: TransformOp::None };
    let samples = fx.split(Split::Test);
    let batch = det.batch_detect(&out.session, &samples, false).unwrap();
    (out.session.log_records(), batch.records)
}

fn sum_raw(path: &std::path::Path, phase: &str) -> (u64, u64, f64) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut t = (0, 0, 0.0);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["phase"] == phase {
            t.0 += v["usage"]["input_tokens"].as_u64().unwrap();
            t.1 += v["usage"]["output_tokens"].as_u64().unwrap();
            t.2 += v["usage"]["wall_time"].as_f64().unwrap();
        }
    }
    t
}

#[test]
fn keypoint_document_costs_258_tokens() {
    let text = read_fixture("keypoints_standing.json");
    assert_eq!(text.len().div_ceil(4), 258);
    let joints = toonscan_core::pose::joints_from_text(&text).unwrap();
    assert_eq!(toonscan_core::pose::joints_to_text(&joints), text);
}

#[test]
fn logged_run_reproduces_reported_totals() {
    let forge = PromptForge::new(TemplateSet::builtin().with_file("query.txt", "").unwrap());
    let (learn_records, detect_records) = run(&forge);
    let cfg = CostConfig { overhead_per_infer: 10, ..Default::default() };
    let all: Vec<_> = learn_records.iter().chain(&detect_records).cloned().collect();
    let r = cost_report(&all, &cfg).unwrap();
    assert_eq!(r.n_infer, 120);
    assert_eq!(r.total_input_tokens, 120 * (255 + 258));
    assert_eq!(r.total_input_tokens, 61_560);
    assert_eq!(r.total_output_tokens, 16_800);
    assert!((r.total_input_tokens as f64 - 62_700.0).abs() / 62_700.0 < 0.05);
    assert!((r.total_output_tokens as f64 - 17_000.0).abs() / 17_000.0 < 0.05);
    assert_eq!(r.tokens_per_infer, 663.0);
    assert_eq!(r.wall_time_per_infer, 3.0);
    assert!(r.learning.input_tokens > 0);

    let table = render_cost_table("ICVL D5", &r);
    assert!(table.contains("663 tokens & 3 sec"), "{table}");
    assert!(table.contains("None & 45 sec"), "{table}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ndjson");
    write_log(&path, &all).unwrap();
    let (input, output, wall) = sum_raw(&path, "detect");
    assert_eq!((input, output), (r.total_input_tokens, r.total_output_tokens));
    assert_eq!(wall, r.total_wall_time);
    let (li, lo, _) = sum_raw(&path, "learn");
    assert_eq!((li, lo), (r.learning.input_tokens, r.learning.output_tokens));
    assert_eq!(cost_report(&read_log(&path).unwrap(), &cfg).unwrap(), r);
}

#[test]
fn query_instruction_adds_its_own_tokens() {
    let forge = PromptForge::default();
    let (_, detect_records) = run(&forge);
    let r = cost_report(&detect_records, &CostConfig::default()).unwrap();
    let query = forge.templates.query_text().len().div_ceil(4) as u64;
    assert_eq!(r.total_input_tokens, 120 * (513 + query));
    assert_eq!(r.tokens_per_infer, (513 + query + 140) as f64);
}

#[test]
fn truncated_logs_are_rejected() {
    let forge = PromptForge::default();
    let (_, mut records) = run(&forge);
    let last_reply = records.iter().rposition(|r| r.role == Role::Assistant).unwrap();
    records.remove(last_reply);
    assert!(matches!(cost_report(&records, &CostConfig::default()), Err(EvalError::IncompleteLogs(_))));
}
