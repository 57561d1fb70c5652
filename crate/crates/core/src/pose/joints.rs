//! MPII 16-joint skeleton and its canonical keypoint text document.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{Dims, PoseError};

pub const JOINT_COUNT: usize = 16;

/// Joint identifiers in MPII channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum JointId {
    RAnkle = 0,
    RKnee = 1,
    RHip = 2,
    LHip = 3,
    LKnee = 4,
    LAnkle = 5,
    Pelvis = 6,
    Thorax = 7,
    UpperNeck = 8,
    HeadTop = 9,
    RWrist = 10,
    RElbow = 11,
    RShoulder = 12,
    LShoulder = 13,
    LElbow = 14,
    LWrist = 15,
}

impl JointId {
    pub const ALL: [JointId; JOINT_COUNT] = [
        JointId::RAnkle,
        JointId::RKnee,
        JointId::RHip,
        JointId::LHip,
        JointId::LKnee,
        JointId::LAnkle,
        JointId::Pelvis,
        JointId::Thorax,
        JointId::UpperNeck,
        JointId::HeadTop,
        JointId::RWrist,
        JointId::RElbow,
        JointId::RShoulder,
        JointId::LShoulder,
        JointId::LElbow,
        JointId::LWrist,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<JointId> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::RAnkle => "r-ankle",
            JointId::RKnee => "r-knee",
            JointId::RHip => "r-hip",
            JointId::LHip => "l-hip",
            JointId::LKnee => "l-knee",
            JointId::LAnkle => "l-ankle",
            JointId::Pelvis => "pelvis",
            JointId::Thorax => "thorax",
            JointId::UpperNeck => "upper-neck",
            JointId::HeadTop => "head-top",
            JointId::RWrist => "r-wrist",
            JointId::RElbow => "r-elbow",
            JointId::RShoulder => "r-shoulder",
            JointId::LShoulder => "l-shoulder",
            JointId::LElbow => "l-elbow",
            JointId::LWrist => "l-wrist",
        }
    }

    pub fn from_name(name: &str) -> Option<JointId> {
        Self::ALL.iter().copied().find(|j| j.name() == name)
    }

    /// The anatomically mirrored joint (left and right swapped).
    pub fn mirror(self) -> JointId {
        match self {
            JointId::RAnkle => JointId::LAnkle,
            JointId::RKnee => JointId::LKnee,
            JointId::RHip => JointId::LHip,
            JointId::LHip => JointId::RHip,
            JointId::LKnee => JointId::RKnee,
            JointId::LAnkle => JointId::RAnkle,
            JointId::RWrist => JointId::LWrist,
            JointId::RElbow => JointId::LElbow,
            JointId::RShoulder => JointId::LShoulder,
            JointId::LShoulder => JointId::RShoulder,
            JointId::LElbow => JointId::RElbow,
            JointId::LWrist => JointId::RWrist,
            centre => centre,
        }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Limb segments used when drawing a skeleton.
pub const SKELETON: [(JointId, JointId); 15] = [
    (JointId::RAnkle, JointId::RKnee),
    (JointId::RKnee, JointId::RHip),
    (JointId::RHip, JointId::Pelvis),
    (JointId::Pelvis, JointId::LHip),
    (JointId::LHip, JointId::LKnee),
    (JointId::LKnee, JointId::LAnkle),
    (JointId::Pelvis, JointId::Thorax),
    (JointId::Thorax, JointId::UpperNeck),
    (JointId::UpperNeck, JointId::HeadTop),
    (JointId::Thorax, JointId::RShoulder),
    (JointId::RShoulder, JointId::RElbow),
    (JointId::RElbow, JointId::RWrist),
    (JointId::Thorax, JointId::LShoulder),
    (JointId::LShoulder, JointId::LElbow),
    (JointId::LElbow, JointId::LWrist),
];

/// A single keypoint. `confidence == 0` marks a joint that was not detected.
impl Serialize for JointId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for JointId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        JointId::from_name(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown joint {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Joint {
    pub const ABSENT: Joint = Joint { x: 0.0, y: 0.0, confidence: 0.0 };

    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }

    pub fn is_detected(&self) -> bool {
        self.confidence > 0.0
    }

    pub fn distance(&self, other: &Joint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSet {
    pub joints: [Joint; JOINT_COUNT],
    pub source_dims: Dims,
}

impl JointSet {
    pub fn absent(dims: Dims) -> Self {
        Self { joints: [Joint::ABSENT; JOINT_COUNT], source_dims: dims }
    }

    pub fn get(&self, id: JointId) -> &Joint {
        &self.joints[id.index()]
    }

    pub fn get_mut(&mut self, id: JointId) -> &mut Joint {
        &mut self.joints[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (JointId, &Joint)> {
        JointId::ALL.iter().copied().zip(self.joints.iter())
    }

    /// Maps joint cells into a frame of different resolution, placing each
    /// joint at the centre of the block its source cell covers.
    pub fn rescaled(&self, dims: Dims) -> JointSet {
        if dims == self.source_dims {
            return self.clone();
        }
        let sx = dims.width as f64 / self.source_dims.width as f64;
        let sy = dims.height as f64 / self.source_dims.height as f64;
        let mut out = JointSet::absent(dims);
        for (slot, j) in out.joints.iter_mut().zip(self.joints.iter()) {
            if j.is_detected() {
                *slot = Joint {
                    x: ((j.x + 0.5) * sx).floor().min(dims.width as f64 - 1.0),
                    y: ((j.y + 0.5) * sy).floor().min(dims.height as f64 - 1.0),
                    confidence: j.confidence,
                };
            }
        }
        out
    }

    /// Checks that detected joints lie inside `source_dims`.
    pub fn validate(&self) -> Result<(), PoseError> {
        for (id, j) in self.iter() {
            if !(j.confidence >= 0.0 && j.confidence.is_finite()) {
                return Err(PoseError::Format(format!("{id}: confidence must be finite and >= 0")));
            }
            if j.is_detected()
                && !(j.x >= 0.0
                    && j.y >= 0.0
                    && j.x < self.source_dims.width as f64
                    && j.y < self.source_dims.height as f64)
            {
                return Err(PoseError::Format(format!(
                    "{id}: ({}, {}) outside {}x{}",
                    j.x, j.y, self.source_dims.height, self.source_dims.width
                )));
            }
        }
        Ok(())
    }
}

/// Canonical keypoint document: UTF-8 JSON, joints in MPII order, fields
/// `name`, `x`, `y`, `confidence`, integer coordinates and confidence with
/// three decimals. Equal inputs give identical bytes.
pub fn joints_to_text(set: &JointSet) -> String {
    let mut out = String::with_capacity(1040);
    let _ = writeln!(
        out,
        "{{\"height\": {}, \"width\": {}, \"joints\": [",
        set.source_dims.height, set.source_dims.width
    );
    for (i, (id, j)) in set.iter().enumerate() {
        let sep = if i + 1 == JOINT_COUNT { "" } else { "," };
        let _ = writeln!(
            out,
            "{{\"name\": \"{}\", \"x\": {}, \"y\": {}, \"confidence\": {:.3}}}{sep}",
            id.name(),
            j.x.round() as i64,
            j.y.round() as i64,
            round3(j.confidence),
        );
    }
    out.push_str("]}\n");
    out
}

fn round3(v: f64) -> f64 {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Deserialize)]
struct TextDoc {
    height: u32,
    width: u32,
    joints: Vec<TextJoint>,
}

#[derive(Deserialize)]
struct TextJoint {
    name: String,
    x: f64,
    y: f64,
    confidence: f64,
}

/// Parses a keypoint document. Joints must appear in MPII order.
pub fn joints_from_text(text: &str) -> Result<JointSet, PoseError> {
    let doc: TextDoc = serde_json::from_str(text).map_err(|e| PoseError::Format(e.to_string()))?;
    if doc.joints.len() != JOINT_COUNT {
        return Err(PoseError::Format(format!(
            "expected {JOINT_COUNT} joints, found {}",
            doc.joints.len()
        )));
    }
    let mut set = JointSet::absent(Dims::new(doc.height, doc.width));
    for (i, tj) in doc.joints.into_iter().enumerate() {
        let id = JointId::from_index(i).expect("index < 16");
        if tj.name != id.name() {
            return Err(PoseError::Format(format!(
                "joint {i} is named {:?}, expected {:?}",
                tj.name,
                id.name()
            )));
        }
        set.joints[i] = Joint::new(tj.x, tj.y, tj.confidence);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_a_bijection() {
        for (i, id) in JointId::ALL.iter().enumerate() {
            assert_eq!(id.index(), i);
            assert_eq!(JointId::from_name(id.name()), Some(*id));
            assert_eq!(id.mirror().mirror(), *id);
        }
        let names: std::collections::HashSet<_> = JointId::ALL.iter().map(|j| j.name()).collect();
        assert_eq!(names.len(), 16);
    }

    #[test]
    fn mirror_table_swaps_sides_only() {
        assert_eq!(JointId::RAnkle.mirror(), JointId::LAnkle);
        assert_eq!(JointId::LShoulder.mirror(), JointId::RShoulder);
        assert_eq!(JointId::Pelvis.mirror(), JointId::Pelvis);
        assert_eq!(JointId::HeadTop.mirror(), JointId::HeadTop);
    }

    #[test]
    fn zero_document_matches_golden() {
        let text = joints_to_text(&JointSet::absent(Dims::new(384, 256)));
        let golden = include_str!("../../tests/fixtures/keypoints_zero.json");
        assert_eq!(text, golden);
    }

    #[test]
    fn serialization_is_deterministic() {
        let mut set = JointSet::absent(Dims::new(384, 256));
        set.joints[3] = Joint::new(17.4, 250.6, 0.87654);
        assert_eq!(joints_to_text(&set), joints_to_text(&set.clone()));
        assert!(joints_to_text(&set).contains("{\"name\": \"l-hip\", \"x\": 17, \"y\": 251, \"confidence\": 0.877}"));
    }

    #[test]
    fn parser_rejects_misordered_joints() {
        let text = joints_to_text(&JointSet::absent(Dims::new(384, 256)))
            .replacen("r-ankle", "l-ankle", 1);
        assert!(joints_from_text(&text).is_err());
    }

    #[test]
    fn rescale_maps_cells_to_block_centres() {
        let mut set = JointSet::absent(Dims::new(96, 64));
        set.joints[0] = Joint::new(10.0, 20.0, 0.5);
        let big = set.rescaled(Dims::new(384, 256));
        assert_eq!(big.joints[0], Joint::new(42.0, 82.0, 0.5));
        assert_eq!(big.joints[1], Joint::ABSENT);
    }
}
