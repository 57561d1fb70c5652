//! Deterministic synthetic dataset of pixel-art characters with pose maps.
//!
//! Each character is a stick figure drawn at heatmap resolution and upscaled
//! to the full image size, so image and heatmap agree exactly. Hallucinated
//! characters cover every defect in the taxonomy: a missing arm, leg or
//! head, and an extra arm or leg.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    write_manifest_atomic, Annotation, DatasetManifest, DefectClass, Label, ModelError, PoseArtifacts, Sample, Split,
    IMAGE_HEIGHT, IMAGE_WIDTH, MANIFEST_VERSION,
};
use crate::oracle::Verdict;
use crate::pose::{decode_joints, render_heatmap, Dims, Heatmap, Joint, JointId, JointSet, PoseError, SKELETON};

/// Heatmap resolution of generated samples (a quarter of the image size).
pub const HEATMAP_DIMS: Dims = Dims::new(IMAGE_HEIGHT / 4, IMAGE_WIDTH / 4);

const MOTIONS: &[&str] = &["kicking", "running", "jumping", "waving", "punching", "walking", "dancing", "stretching"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defect {
    MissingArm,
    MissingLeg,
    MissingHead,
    ExtraArm,
    ExtraLeg,
}

impl Defect {
    pub const ALL: [Defect; 5] = [Defect::MissingArm, Defect::MissingLeg, Defect::MissingHead, Defect::ExtraArm, Defect::ExtraLeg];

    pub fn class(self) -> DefectClass {
        match self {
            Defect::MissingArm | Defect::MissingLeg | Defect::MissingHead => DefectClass::FewComponents,
            Defect::ExtraArm | Defect::ExtraLeg => DefectClass::ManyComponents,
        }
    }

    pub fn expected_verdict(self) -> Verdict {
        match self.class() {
            DefectClass::FewComponents => Verdict::Few,
            DefectClass::ManyComponents => Verdict::Many,
        }
    }

    /// Short phrase as it appears in an annotation description.
    pub fn phrase(self) -> &'static str {
        match self {
            Defect::MissingArm => "one arm",
            Defect::MissingLeg => "one leg",
            Defect::MissingHead => "no head",
            Defect::ExtraArm => "three arms",
            Defect::ExtraLeg => "three legs",
        }
    }

    fn joints(self, left: bool) -> [JointId; 2] {
        use JointId::*;
        match (self, left) {
            (Defect::MissingArm | Defect::ExtraArm, false) => [RWrist, RElbow],
            (Defect::MissingArm | Defect::ExtraArm, true) => [LWrist, LElbow],
            (Defect::MissingLeg | Defect::ExtraLeg, false) => [RAnkle, RKnee],
            (Defect::MissingLeg | Defect::ExtraLeg, true) => [LAnkle, LKnee],
            (Defect::MissingHead, _) => [HeadTop, UpperNeck],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub pool_per_class: usize,
    pub test_per_class: usize,
    /// Share of correct test characters drawn with one faint, partly hidden
    /// limb joint.
    pub occluded_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { seed: 7, pool_per_class: 5, test_per_class: 60, occluded_fraction: 0.1 }
    }
}

/// One generated character before it is written to disk.
#[derive(Debug, Clone)]
pub struct Character {
    pub label: Label,
    pub defect: Option<Defect>,
    pub occluded: bool,
    pub motion: String,
    /// Joints at heatmap resolution.
    pub joints: JointSet,
    pub heatmap: Heatmap,
    pub image: RgbImage,
}

/// Canonical standing pose at heatmap resolution (64 wide, 96 high).
fn base_pose() -> [(f64, f64); 16] {
    [
        (25.0, 87.0), (25.0, 72.0), (26.0, 57.0), (37.0, 57.0), (38.0, 72.0), (38.0, 87.0),
        (32.0, 57.0), (32.0, 33.0), (32.0, 25.0), (32.0, 12.0), (15.0, 55.0), (17.0, 43.0),
        (22.0, 33.0), (42.0, 33.0), (46.0, 43.0), (48.0, 55.0),
    ]
}

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Joint positions for a character, before defects.
fn sample_pose(rng: &mut ChaCha8Rng) -> JointSet {
    let mut set = JointSet::absent(HEATMAP_DIMS);
    let (dx, dy): (i32, i32) = (rng.random_range(-4..=4), rng.random_range(-3..=2));
    for (slot, (x, y)) in set.joints.iter_mut().zip(base_pose()) {
        let jx: i32 = rng.random_range(-1..=1);
        let jy: i32 = rng.random_range(-1..=1);
        let conf = f32_exact(rng.random_range(0.62..0.97));
        *slot = Joint::new(x + (dx + jx) as f64, y + (dy + jy) as f64, conf);
    }
    set
}

/// Offset for a duplicated limb, pointing away from the body.
fn extra_offset(id: JointId) -> (f64, f64) {
    use JointId::*;
    match id {
        RWrist | RElbow => (-11.0, -14.0),
        LWrist | LElbow => (11.0, -14.0),
        RAnkle | RKnee => (-12.0, -4.0),
        _ => (12.0, -4.0),
    }
}

fn blend_peak(h: &mut Heatmap, channel: usize, x: f64, y: f64, conf: f64) {
    let d = h.dims();
    for row in 0..d.height as usize {
        for col in 0..d.width as usize {
            let (ex, ey) = (col as f64 - x, row as f64 - y);
            let v = conf * (-(ex * ex + ey * ey) / 8.0).exp();
            if v > h.get(channel, row, col) {
                h.set(channel, row, col, v);
            }
        }
    }
}

fn stamp(img: &mut RgbImage, x: f64, y: f64, r: f64, c: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let ri = r.ceil() as i64;
    for yy in (y as i64 - ri)..=(y as i64 + ri) {
        for xx in (x as i64 - ri)..=(x as i64 + ri) {
            let (ex, ey) = (xx as f64 - x, yy as f64 - y);
            if ex * ex + ey * ey <= r * r && xx >= 0 && yy >= 0 && xx < w && yy < h {
                img.put_pixel(xx as u32, yy as u32, c);
            }
        }
    }
}

fn segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), r: f64, c: Rgb<u8>) {
    let steps = ((b.0 - a.0).hypot(b.1 - a.1) * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        stamp(img, a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, r, c);
    }
}

fn paint(joints: &JointSet, extras: &[(JointId, f64, f64)], rng: &mut ChaCha8Rng) -> RgbImage {
    let bg = Rgb([rng.random_range(170..250), rng.random_range(170..250), rng.random_range(170..250)]);
    let body = Rgb([rng.random_range(20..120), rng.random_range(20..120), rng.random_range(60..200)]);
    let skin = Rgb([240, 200, 160]);
    let mut img = RgbImage::from_pixel(HEATMAP_DIMS.width, HEATMAP_DIMS.height, bg);
    let pt = |id: JointId| (joints.get(id).x, joints.get(id).y);
    for (a, b) in SKELETON {
        if joints.get(a).is_detected() && joints.get(b).is_detected() {
            segment(&mut img, pt(a), pt(b), 1.5, body);
        }
    }
    for &(id, x, y) in extras {
        // a duplicated limb hangs off the same shoulder or hip
        let anchor = match id {
            JointId::RElbow => JointId::RShoulder,
            JointId::LElbow => JointId::LShoulder,
            JointId::RKnee => JointId::RHip,
            JointId::LKnee => JointId::LHip,
            JointId::RWrist => JointId::RElbow,
            JointId::LWrist => JointId::LElbow,
            JointId::RAnkle => JointId::RKnee,
            _ => JointId::LKnee,
        };
        let (ox, oy) = extra_offset(id);
        let from = if matches!(id, JointId::RWrist | JointId::LWrist | JointId::RAnkle | JointId::LAnkle) {
            (pt(anchor).0 + ox, pt(anchor).1 + oy)
        } else {
            pt(anchor)
        };
        segment(&mut img, from, (x, y), 1.5, body);
    }
    if joints.get(JointId::HeadTop).is_detected() {
        let (hx, hy) = pt(JointId::HeadTop);
        let (nx, ny) = pt(JointId::UpperNeck);
        stamp(&mut img, (hx + nx) / 2.0, (hy + ny) / 2.0, 6.0, skin);
    }
    imageops::resize(&img, IMAGE_WIDTH, IMAGE_HEIGHT, imageops::FilterType::Nearest)
}

/// Generates one character with an optional defect.
pub fn character(rng: &mut ChaCha8Rng, defect: Option<Defect>, occluded: bool) -> Character {
    let motion = MOTIONS[rng.random_range(0..MOTIONS.len())].to_string();
    let mut joints = sample_pose(rng);
    let left = rng.random_bool(0.5);
    let mut extras = Vec::new();
    match defect {
        Some(d @ (Defect::MissingArm | Defect::MissingLeg | Defect::MissingHead)) => {
            for id in d.joints(left) {
                *joints.get_mut(id) = Joint::ABSENT;
            }
        }
        Some(d) => {
            for id in d.joints(left) {
                let j = joints.get(id);
                let (ox, oy) = extra_offset(id);
                let (x, y) = ((j.x + ox).clamp(2.0, 61.0), (j.y + oy).clamp(2.0, 93.0));
                extras.push((id, x, y));
            }
        }
        None => {}
    }
    if occluded {
        let id = [JointId::RWrist, JointId::LWrist, JointId::RAnkle, JointId::LAnkle][rng.random_range(0..4)];
        joints.get_mut(id).confidence = f32_exact(rng.random_range(0.12..0.28));
    }
    let mut heatmap = render_heatmap(&joints, 2.0, HEATMAP_DIMS).expect("positive sigma");
    for &(id, x, y) in &extras {
        let conf = f32_exact(joints.get(id).confidence * 0.85);
        blend_peak(&mut heatmap, id.index(), x, y, conf);
    }
    let mut image_joints = joints.clone();
    if occluded {
        // faint joints are hidden behind the body in the drawing
        for j in image_joints.joints.iter_mut().filter(|j| j.confidence < 0.3) {
            *j = Joint::ABSENT;
        }
    }
    let image = paint(&image_joints, &extras, rng);
    let label = if defect.is_some() { Label::Hallucinated } else { Label::Correct };
    Character { label, defect, occluded, motion, joints, heatmap, image }
}

/// Constructed census cases: one correct character plus one per defect,
/// with the verdict each should receive.
pub fn defect_suite(seed: u64) -> Vec<(String, Character, Verdict)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![("correct".to_string(), character(&mut rng, None, false), Verdict::Ok)];
    for d in Defect::ALL {
        for side in ["a", "b"] {
            let c = character(&mut rng, Some(d), false);
            let name = format!("{}_{side}", serde_json::to_value(d).unwrap().as_str().unwrap());
            out.push((name, c, d.expected_verdict()));
        }
    }
    out
}

fn description(c: &Character) -> String {
    match c.defect {
        Some(d) => {
            let detail = match d {
                Defect::MissingArm => "An arm is missing from the shoulder",
                Defect::MissingLeg => "A leg is missing below the hip",
                Defect::MissingHead => "The character has no head above the neck",
                Defect::ExtraArm => "A third arm grows from the shoulder",
                Defect::ExtraLeg => "A third leg grows from the hip",
            };
            format!("{}. {detail}.", d.phrase())
        }
        None if c.occluded => "two arms and two legs. One limb is partly hidden behind the body.".into(),
        None => "two arms and two legs.".into(),
    }
}

/// Writes a dataset to `dir`: `manifest.json`, `images/` and `heatmaps/`.
/// Returns the manifest path.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Result<PathBuf, ModelError> {
    for sub in ["images", "heatmaps"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| ModelError::io(&dir.join(sub), e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stamp_time = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut plan: Vec<(Split, Option<Defect>, bool)> = Vec::new();
    for i in 0..spec.pool_per_class {
        plan.push((Split::ExamplePool, None, false));
        plan.push((Split::ExamplePool, Some(Defect::ALL[i % Defect::ALL.len()]), false));
    }
    let occluded = (spec.test_per_class as f64 * spec.occluded_fraction).round() as usize;
    for i in 0..spec.test_per_class {
        plan.push((Split::Test, None, i < occluded));
        plan.push((Split::Test, Some(Defect::ALL[i % Defect::ALL.len()]), false));
    }
    let mut samples = Vec::with_capacity(plan.len());
    for (n, (split, defect, occ)) in plan.into_iter().enumerate() {
        let c = character(&mut rng, defect, occ);
        let id = format!("{}-{:03}", if split == Split::ExamplePool { "pool" } else { "test" }, n);
        let image_ref = PathBuf::from(format!("images/{id}.png"));
        let heatmap_ref = PathBuf::from(format!("heatmaps/{id}.pkhm"));
        let (image_path, heatmap_path) = (dir.join(&image_ref), dir.join(&heatmap_ref));
        c.image.save(&image_path).map_err(|e| ModelError::io(&image_path, std::io::Error::other(e)))?;
        c.heatmap.write(&heatmap_path).map_err(|e| pose_io(&heatmap_path, e))?;
        let joints = decode_joints(&c.heatmap).rescaled(Dims::new(IMAGE_HEIGHT, IMAGE_WIDTH));
        let mut ann = Annotation::new(c.label, description(&c), "synth");
        ann.timestamp = stamp_time;
        if let Some(d) = c.defect {
            ann = ann.with_defect(d.class());
        }
        samples.push(Sample {
            id,
            image_ref,
            motion: c.motion,
            annotation: Some(ann),
            pose: Some(PoseArtifacts { heatmap_ref, joints: Some(joints), overlay_ref: None }),
            split,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        samples,
        provenance: format!("synthetic characters, seed {}", spec.seed),
    };
    let path = dir.join("manifest.json");
    write_manifest_atomic(&path, &manifest)?;
    Ok(path)
}

fn pose_io(path: &Path, e: PoseError) -> ModelError {
    match e {
        PoseError::Io(io) => ModelError::io(path, io),
        other => ModelError::io(path, std::io::Error::other(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{limb_census, CensusConfig};

    #[test]
    fn suite_verdicts_match_taxonomy() {
        for (name, c, expected) in defect_suite(3) {
            let j = c.joints.rescaled(Dims::new(IMAGE_HEIGHT, IMAGE_WIDTH));
            let v = limb_census(&j, Some(&c.heatmap), &CensusConfig::default());
            assert_eq!(v.verdict, expected, "{name}: {v:?}");
        }
    }

    #[test]
    fn images_have_dataset_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = character(&mut rng, Some(Defect::ExtraLeg), false);
        assert_eq!(c.image.dimensions(), (IMAGE_WIDTH, IMAGE_HEIGHT));
        assert_eq!(c.heatmap.dims(), HEATMAP_DIMS);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = character(&mut ChaCha8Rng::seed_from_u64(9), Some(Defect::MissingArm), false);
        let b = character(&mut ChaCha8Rng::seed_from_u64(9), Some(Defect::MissingArm), false);
        assert_eq!(a.image, b.image);
        assert_eq!(a.heatmap, b.heatmap);
    }
}
