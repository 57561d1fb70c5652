#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use tempfile::TempDir;
use toonscan_core::model::{load_manifest, DatasetManifest, Sample, Split};
use toonscan_core::pose::{joints_from_text, TransformOp};
use toonscan_core::prompt::{DiskMaterials, MaterialSource, PromptError, SampleMaterial};
use toonscan_core::synth::{generate, SynthSpec};

pub struct Fixture {
    _dir: TempDir,
    pub manifest_path: PathBuf,
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Fixture {
    pub fn materials(&self) -> DiskMaterials {
        DiskMaterials::new(&self.root)
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.manifest.split(split).collect()
    }
}

/// The default synthetic dataset: 5+5 pool samples and 60+60 test samples.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = generate(dir.path(), &SynthSpec::default()).unwrap();
        let loaded = load_manifest(&manifest_path).unwrap();
        Fixture { root: loaded.root.clone(), manifest: loaded.manifest, manifest_path, _dir: dir }
    })
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixtures_dir().join(name)).unwrap()
}

/// Serves every sample with the same image and the standing keypoint set.
pub struct FixedMaterials {
    pub base: SampleMaterial,
}

impl FixedMaterials {
    pub fn standing() -> Self {
        let joints = joints_from_text(&read_fixture("keypoints_standing.json")).unwrap();
        let rgb = image::RgbImage::from_pixel(256, 384, image::Rgb([200, 180, 150]));
        Self { base: SampleMaterial { sample_id: String::new(), rgb, heatmap: None, joints: Some(joints), overlay: None } }
    }
}

impl MaterialSource for FixedMaterials {
    fn material(&self, sample: &Sample, _op: TransformOp) -> Result<SampleMaterial, PromptError> {
        let mut m = self.base.clone();
        m.sample_id = sample.id.clone();
        Ok(m)
    }
}
