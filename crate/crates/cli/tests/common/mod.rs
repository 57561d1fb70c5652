#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use toonscan_core::config::AppConfig;
use toonscan_core::synth::{generate, SynthSpec};

/// A generated dataset plus a config with a `mock` backend and a
/// rate-limited `slow` mock.
pub struct Env {
    pub dir: TempDir,
    pub manifest: PathBuf,
    pub config: PathBuf,
}

pub fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(&dir.path().join("data"), &SynthSpec::default()).unwrap();
    let config = dir.path().join("config.json");
    let body = serde_json::json!({
        "backends": [
            {"id": "mock", "kind": "mock"},
            {"id": "slow", "kind": "mock", "rate_limit": 300}
        ],
        "cost": {"overhead_per_infer": 10},
        "runs_dir": "runs"
    });
    std::fs::write(&config, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    Env { dir, manifest, config }
}

impl Env {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn app_config(&self) -> AppConfig {
        AppConfig::load(&self.config).unwrap()
    }

    pub fn runs(&self) -> PathBuf {
        self.path().join("runs")
    }

    /// Runs the binary with this env's manifest and config.
    pub fn cli(&self, args: &[&str]) -> Output {
        let mut all = vec!["--manifest", self.manifest.to_str().unwrap(), "--config", self.config.to_str().unwrap()];
        all.extend_from_slice(args);
        toonscan(self.path(), &all)
    }
}

pub fn toonscan(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toonscan"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

pub fn repo_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}
