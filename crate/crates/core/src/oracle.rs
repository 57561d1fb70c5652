//! Rule-based limb census over pose artifacts.
//!
//! Counts confident joints per anatomical group and, when a heatmap is
//! available, secondary peaks that suggest a duplicated limb. The census is
//! the local baseline detector and the decision core of the mock backend.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::TurnKind;
use crate::pose::{decode_joints, Heatmap, JointId, JointSet};

/// Pose inputs the oracle may inspect for one sample.
#[derive(Debug, Clone, Default)]
pub struct PoseEvidence {
    /// Joints in image coordinates.
    pub joints: Option<JointSet>,
    pub heatmap: Option<Heatmap>,
    /// Whether the prompt variant shows any pose representation.
    pub pose_visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbGroup {
    pub name: String,
    pub joints: Vec<JointId>,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CensusConfig {
    pub conf_threshold: f64,
    pub groups: Vec<LimbGroup>,
    /// Minimum separation, in image pixels, between a channel's primary
    /// peak and a secondary peak for the latter to count.
    pub extra_peak_radius: f64,
}

impl Default for CensusConfig {
    fn default() -> Self {
        use JointId::*;
        let group = |name: &str, joints: Vec<JointId>| LimbGroup { name: name.into(), expected: joints.len(), joints };
        Self {
            conf_threshold: 0.3,
            groups: vec![
                group("arms", vec![RWrist, LWrist, RElbow, LElbow]),
                group("legs", vec![RAnkle, LAnkle, RKnee, LKnee]),
                group("head", vec![HeadTop, UpperNeck]),
            ],
            extra_peak_radius: 12.0,
        }
    }
}

impl CensusConfig {
    pub fn with_threshold(mut self, tau: f64) -> Self {
        self.conf_threshold = tau;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.conf_threshold > 0.0 && self.conf_threshold < 1.0) {
            return Err(format!("conf_threshold {} must lie in (0, 1)", self.conf_threshold));
        }
        if self.extra_peak_radius.is_nan() || self.extra_peak_radius < 0.0 {
            return Err("extra_peak_radius must be non-negative".into());
        }
        let mut seen = std::collections::HashSet::new();
        for g in &self.groups {
            for j in &g.joints {
                if !seen.insert(*j) {
                    return Err(format!("joint {} appears in more than one group", j.name()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "OK")]
    Ok,
    Few,
    Many,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Ok => "OK",
            Verdict::Few => "Few",
            Verdict::Many => "Many",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub observed: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub joint: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusVerdict {
    pub verdict: Verdict,
    pub per_group_counts: BTreeMap<String, GroupCount>,
    pub evidence: Vec<Evidence>,
}

impl CensusVerdict {
    pub fn is_ok(&self) -> bool {
        self.verdict == Verdict::Ok
    }
}

/// Local maxima of a channel at or above `tau`, as `(row, col, value)`.
/// A cell is a maximum when no 8-neighbour is larger and no earlier
/// neighbour in scan order is equal.
fn local_maxima(h: &Heatmap, channel: usize, tau: f64) -> Vec<(usize, usize, f64)> {
    let d = h.dims();
    let (rows, cols) = (d.height as usize, d.width as usize);
    let data = h.channel(channel);
    let mut out = Vec::new();
    for y in 0..rows {
        for x in 0..cols {
            let v = data[y * cols + x];
            if v < tau {
                continue;
            }
            let mut is_max = true;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= rows as i64 || nx >= cols as i64 {
                        continue;
                    }
                    let n = data[ny as usize * cols + nx as usize];
                    let earlier = (dy, dx) < (0, 0);
                    if n > v || (n == v && earlier) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                out.push((y, x, v));
            }
        }
    }
    out
}

/// Counts joints per group against the expected anatomy.
pub fn limb_census(joints: &JointSet, heatmap: Option<&Heatmap>, cfg: &CensusConfig) -> CensusVerdict {
    let tau = cfg.conf_threshold;
    let mut counts = BTreeMap::new();
    let mut evidence = Vec::new();
    let (mut few, mut many) = (false, false);
    for group in &cfg.groups {
        let mut observed = 0usize;
        for &id in &group.joints {
            let j = joints.get(id);
            if j.confidence >= tau {
                observed += 1;
            } else {
                evidence.push(Evidence {
                    joint: id.name().into(),
                    reason: format!("not detected (confidence {:.2} below {:.2})", j.confidence, tau),
                });
            }
            if let Some(h) = heatmap {
                let extra = extra_peaks(h, id, joints, tau, cfg.extra_peak_radius);
                for (x, y, v) in extra {
                    observed += 1;
                    evidence.push(Evidence {
                        joint: id.name().into(),
                        reason: format!("extra peak at ({x:.0}, {y:.0}) with confidence {v:.2}"),
                    });
                }
            }
        }
        few |= observed < group.expected;
        many |= observed > group.expected;
        counts.insert(group.name.clone(), GroupCount { observed, expected: group.expected });
    }
    let verdict = if few {
        Verdict::Few
    } else if many {
        Verdict::Many
    } else {
        Verdict::Ok
    };
    CensusVerdict { verdict, per_group_counts: counts, evidence }
}

/// Secondary peaks of joint `id`'s channel, in image coordinates.
fn extra_peaks(h: &Heatmap, id: JointId, joints: &JointSet, tau: f64, radius: f64) -> Vec<(f64, f64, f64)> {
    let hd = h.dims();
    let img = joints.source_dims;
    let sx = img.width as f64 / hd.width as f64;
    let sy = img.height as f64 / hd.height as f64;
    let maxima = local_maxima(h, id.index(), tau);
    let Some(&(py, px, _)) = maxima.iter().max_by(|a, b| {
        // highest value; ties resolved toward scan order like decode_joints
        a.2.partial_cmp(&b.2).unwrap().then((b.0, b.1).cmp(&(a.0, a.1)))
    }) else {
        return Vec::new();
    };
    maxima
        .into_iter()
        .filter(|&(y, x, _)| (y, x) != (py, px))
        .filter(|&(y, x, _)| {
            let dx = (x as f64 - px as f64) * sx;
            let dy = (y as f64 - py as f64) * sy;
            (dx * dx + dy * dy).sqrt() > radius
        })
        .map(|(y, x, v)| ((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy, v))
        .collect()
}

/// Reply given when the pose artifacts cannot be resolved.
pub const REFUSAL: &str = "I am unable to assess this character because its pose information is unavailable.";

/// Deterministic backend reply for a sample's pose evidence.
///
/// Replies start with `class: C` or `class: H`. Without a visible pose
/// representation the reply is always `class: C`.
pub fn mock_reply(evidence: Option<&PoseEvidence>, cfg: &CensusConfig, turn: TurnKind) -> String {
    let Some(ev) = evidence else { return REFUSAL.into() };
    let Some(h) = ev.heatmap.as_ref() else { return REFUSAL.into() };
    let lead = if turn == TurnKind::Example { "Understood. " } else { "" };
    if !ev.pose_visible {
        return format!("{lead}class: C. The character looks complete at a glance.");
    }
    let decoded;
    let joints = match &ev.joints {
        Some(j) => j,
        None => {
            decoded = decode_joints(h);
            &decoded
        }
    };
    let census = limb_census(joints, Some(h), cfg);
    let tally = census
        .per_group_counts
        .iter()
        .map(|(g, c)| format!("{g} {}/{}", c.observed, c.expected))
        .collect::<Vec<_>>()
        .join(", ");
    match census.verdict {
        Verdict::Ok => format!("{lead}class: C. All limbs are accounted for ({tally})."),
        v => {
            let what = if v == Verdict::Few { "missing" } else { "extra" };
            let cited = census
                .evidence
                .iter()
                .take(4)
                .map(|e| format!("{} {}", e.joint, e.reason))
                .collect::<Vec<_>>()
                .join("; ");
            format!("{lead}class: H. The character has {what} body components: {cited} ({tally}).")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{render_heatmap, Dims, Joint};

    fn upright(conf: f64) -> JointSet {
        let mut j = JointSet::absent(Dims::new(384, 256));
        let coords = [
            (100, 350), (100, 290), (105, 230), (150, 230), (155, 290), (155, 350),
            (128, 230), (128, 130), (128, 100), (128, 50), (60, 220), (70, 170),
            (90, 130), (165, 130), (185, 170), (195, 220),
        ];
        for (slot, (x, y)) in j.joints.iter_mut().zip(coords) {
            *slot = Joint::new(x as f64, y as f64, conf);
        }
        j
    }

    #[test]
    fn complete_body_is_ok() {
        let v = limb_census(&upright(0.9), None, &CensusConfig::default());
        assert_eq!(v.verdict, Verdict::Ok);
        assert!(v.evidence.is_empty());
        assert_eq!(v.per_group_counts["legs"], GroupCount { observed: 4, expected: 4 });
    }

    #[test]
    fn missing_left_leg_is_few() {
        let mut j = upright(0.9);
        j.get_mut(JointId::LAnkle).confidence = 0.0;
        j.get_mut(JointId::LKnee).confidence = 0.0;
        let v = limb_census(&j, None, &CensusConfig::default());
        assert_eq!(v.verdict, Verdict::Few);
        assert_eq!(v.per_group_counts["legs"].observed, 2);
        assert_eq!(v.evidence.len(), 2);
    }

    #[test]
    fn duplicate_ankle_peak_is_many() {
        let j = upright(0.9);
        let hd = Dims::new(96, 64);
        let mut h = render_heatmap(&j.rescaled(hd), 2.0, hd).unwrap();
        // second r-ankle peak 40 image px (10 heatmap px) to the left
        let (ax, ay) = (25usize, 87usize);
        h.set(JointId::RAnkle.index(), ay, ax - 10, 0.8);
        let v = limb_census(&j, Some(&h), &CensusConfig::default());
        assert_eq!(v.verdict, Verdict::Many);
        assert_eq!(v.per_group_counts["legs"], GroupCount { observed: 5, expected: 4 });
    }

    #[test]
    fn near_peaks_do_not_count() {
        let j = upright(0.9);
        let hd = Dims::new(96, 64);
        let mut h = render_heatmap(&j.rescaled(hd), 2.0, hd).unwrap();
        // 3 heatmap px = 12 image px: not beyond the radius
        h.set(JointId::RAnkle.index(), 87, 22, 0.8);
        assert_eq!(limb_census(&j, Some(&h), &CensusConfig::default()).verdict, Verdict::Ok);
    }

    #[test]
    fn few_takes_precedence() {
        let j = {
            let mut j = upright(0.9);
            j.get_mut(JointId::RWrist).confidence = 0.1;
            j
        };
        let hd = Dims::new(96, 64);
        let mut h = render_heatmap(&j.rescaled(hd), 2.0, hd).unwrap();
        h.set(JointId::LAnkle.index(), 10, 10, 0.9);
        let v = limb_census(&j, Some(&h), &CensusConfig::default());
        assert_eq!(v.verdict, Verdict::Few);
        assert_eq!(v.per_group_counts["legs"].observed, 5);
    }

    #[test]
    fn default_groups_are_disjoint() {
        assert!(CensusConfig::default().validate().is_ok());
        let mut bad = CensusConfig::default();
        bad.groups[1].joints.push(JointId::RWrist);
        assert!(bad.validate().is_err());
        assert!(CensusConfig::default().with_threshold(1.0).validate().is_err());
    }

    #[test]
    fn replies_follow_the_grammar() {
        let j = upright(0.9);
        let hd = Dims::new(96, 64);
        let h = render_heatmap(&j.rescaled(hd), 2.0, hd).unwrap();
        let ev = PoseEvidence { joints: Some(j.clone()), heatmap: Some(h.clone()), pose_visible: true };
        let ok = mock_reply(Some(&ev), &CensusConfig::default(), TurnKind::Query);
        assert_eq!(ok.matches("class: C").count(), 1);
        assert!(!ok.contains("class: H"));

        let mut broken = j.clone();
        broken.get_mut(JointId::LWrist).confidence = 0.0;
        let ev = PoseEvidence { joints: Some(broken), heatmap: Some(h), pose_visible: true };
        let bad = mock_reply(Some(&ev), &CensusConfig::default(), TurnKind::Query);
        assert!(bad.starts_with("class: H"));
        assert!(bad.contains("wrist"));

        let blind = PoseEvidence { pose_visible: false, ..ev };
        assert!(mock_reply(Some(&blind), &CensusConfig::default(), TurnKind::Query).starts_with("class: C"));
        let missing = PoseEvidence { heatmap: None, ..blind };
        assert_eq!(mock_reply(Some(&missing), &CensusConfig::default(), TurnKind::Query), REFUSAL);
        assert_eq!(mock_reply(None, &CensusConfig::default(), TurnKind::Query), REFUSAL);
    }
}
