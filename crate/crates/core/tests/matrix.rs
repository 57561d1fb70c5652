mod common;

use std::fs;

use common::fixture;
use toonscan_core::eval::{render_matrix, run_matrix, CostConfig, RunMatrixSpec};
use toonscan_core::gateway::{BackendConfig, Gateway};
use toonscan_core::icvl::LearnPolicy;
use toonscan_core::pose::TransformOp;
use toonscan_core::prompt::{PromptForge, PromptVariant};

fn spec(variants: Vec<PromptVariant>, shots: Vec<usize>, transforms: Vec<TransformOp>, backends: &[&str]) -> RunMatrixSpec {
    RunMatrixSpec {
        variants,
        shots_per_class: shots,
        transforms,
        backends: backends.iter().map(|s| s.to_string()).collect(),
        seed: 3,
        policy: LearnPolicy::default(),
        cost: CostConfig { overhead_per_infer: 10, ..Default::default() },
    }
}

fn gateways() -> Vec<Gateway> {
    let second = BackendConfig { id: "mock-b".into(), ..BackendConfig::mock() };
    vec![Gateway::mock(), Gateway::from_config(second)]
}

fn run_to(dir: &std::path::Path, s: &RunMatrixSpec) -> (String, String) {
    let fx = fixture();
    run_matrix(s, &fx.manifest, &gateways(), &PromptForge::default(), &fx.materials(), Some(dir)).unwrap();
    (fs::read_to_string(dir.join("report.json")).unwrap(), fs::read_to_string(dir.join("report.txt")).unwrap())
}

#[test]
fn shots_and_transform_sweeps_are_reproducible() {
    let s = spec(vec![PromptVariant::D5], vec![1, 3, 5], TransformOp::ALL.to_vec(), &["mock", "mock-b"]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_to(a.path(), &s);
    let second = run_to(b.path(), &s);
    assert_eq!(first, second);
    let text = first.1;
    assert!(text.contains("Model (D5) | N=1 | N=3 | N=5"), "{text}");
    assert!(text.contains("Model (D5) | Base | Horizontal-Flip | 0.5π Rotation"), "{text}");
    let cells = a.path().join("cells");
    assert_eq!(fs::read_dir(&cells).unwrap().count(), 2 * 3 * 3);
    let one = cells.join("mock_D5_n5_hflip");
    for f in ["learn.ndjson", "detect.ndjson", "results.json", "report.json", "results.csv"] {
        assert!(one.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(one.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 121);
}

#[test]
fn variant_table_and_learn_sizes() {
    let fx = fixture();
    let s = spec(PromptVariant::ALL.to_vec(), vec![1], vec![TransformOp::None], &["mock"]);
    let report = run_matrix(&s, &fx.manifest, &gateways(), &PromptForge::default(), &fx.materials(), None).unwrap();
    assert_eq!(report.cells.len(), 8);
    for c in &report.cells {
        assert!(c.error.is_none(), "{:?}", c.error);
        let learned = c.learn.as_ref().unwrap().verified.len();
        assert_eq!(learned, if c.key.variant.uses_examples() { 2 } else { 0 });
        assert_eq!(c.eval.as_ref().unwrap().n_test, 120);
    }
    let text = render_matrix(&report);
    assert!(text.contains("Model | mock\n"), "{text}");
    let d5 = report.cells.iter().find(|c| c.key.variant == PromptVariant::D5).unwrap();
    assert_eq!(d5.eval.as_ref().unwrap().overall_accuracy, 114.0 / 120.0);
}

#[test]
fn missing_backend_fails_only_its_cells() {
    let fx = fixture();
    let s = spec(vec![PromptVariant::B], vec![1], vec![TransformOp::None], &["mock", "remote-x"]);
    let report = run_matrix(&s, &fx.manifest, &gateways(), &PromptForge::default(), &fx.materials(), None).unwrap();
    let (ok, bad): (Vec<_>, Vec<_>) = report.cells.iter().partition(|c| c.error.is_none());
    assert_eq!(ok.len(), 1);
    assert_eq!(bad.len(), 1);
    assert!(bad[0].error.as_ref().unwrap().contains("remote-x"));
    assert!(render_matrix(&report).contains("n/a"));
}

#[test]
fn empty_axes_are_rejected() {
    let fx = fixture();
    let s = spec(vec![], vec![1], vec![TransformOp::None], &["mock"]);
    assert!(run_matrix(&s, &fx.manifest, &gateways(), &PromptForge::default(), &fx.materials(), None).is_err());
}
