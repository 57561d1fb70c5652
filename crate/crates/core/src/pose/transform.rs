use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::heatmap::Heatmap;
use super::joints::{Joint, JointId, JointSet, JOINT_COUNT};
use super::Dims;

/// Image transforms used by the robustness sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformOp {
    #[default]
    None,
    /// Horizontal mirror; left and right joints trade places.
    Hflip,
    /// Quarter turn counter-clockwise; height and width swap.
    RotHalfPi,
}

impl TransformOp {
    pub const ALL: [TransformOp; 3] = [TransformOp::None, TransformOp::Hflip, TransformOp::RotHalfPi];

    pub fn name(self) -> &'static str {
        match self {
            TransformOp::None => "none",
            TransformOp::Hflip => "hflip",
            TransformOp::RotHalfPi => "rot_half_pi",
        }
    }

    /// Column heading used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            TransformOp::None => "Base",
            TransformOp::Hflip => "Horizontal-Flip",
            TransformOp::RotHalfPi => "0.5π Rotation",
        }
    }

    pub fn output_dims(self, d: Dims) -> Dims {
        match self {
            TransformOp::RotHalfPi => d.transposed(),
            _ => d,
        }
    }

    /// Source pixel `(x, y)` that lands on output pixel `(ox, oy)`.
    fn source_of(self, src: Dims, ox: u32, oy: u32) -> (u32, u32) {
        match self {
            TransformOp::None => (ox, oy),
            TransformOp::Hflip => (src.width - 1 - ox, oy),
            // forward map is (x', y') = (y, W - 1 - x)
            TransformOp::RotHalfPi => (src.width - 1 - oy, ox),
        }
    }

    fn map_point(self, src: Dims, x: f64, y: f64) -> (f64, f64) {
        let w = src.width as f64;
        match self {
            TransformOp::None => (x, y),
            TransformOp::Hflip => (w - 1.0 - x, y),
            TransformOp::RotHalfPi => (y, w - 1.0 - x),
        }
    }

    fn target_joint(self, id: JointId) -> JointId {
        match self {
            TransformOp::Hflip => id.mirror(),
            _ => id,
        }
    }

    pub fn apply_image(self, img: &RgbImage) -> RgbImage {
        let src = Dims::new(img.height(), img.width());
        let out = self.output_dims(src);
        RgbImage::from_fn(out.width, out.height, |x, y| {
            let (sx, sy) = self.source_of(src, x, y);
            *img.get_pixel(sx, sy)
        })
    }

    /// Maps detected joints; undetected joints stay at the absent sentinel.
    pub fn apply_joints(self, joints: &JointSet) -> JointSet {
        let src = joints.source_dims;
        let mut out = JointSet::absent(self.output_dims(src));
        for (id, j) in joints.iter() {
            if !j.is_detected() {
                continue;
            }
            let (x, y) = self.map_point(src, j.x, j.y);
            *out.get_mut(self.target_joint(id)) = Joint::new(x, y, j.confidence);
        }
        out
    }

    pub fn apply_heatmap(self, h: &Heatmap) -> Heatmap {
        let src = h.dims();
        let dst = self.output_dims(src);
        let mut out = Heatmap::zeros(dst);
        for c in 0..JOINT_COUNT {
            let id = JointId::from_index(c).expect("channel index");
            let target = self.target_joint(id).index();
            for oy in 0..dst.height {
                for ox in 0..dst.width {
                    let (sx, sy) = self.source_of(src, ox, oy);
                    out.set(target, oy as usize, ox as usize, h.get(c, sy as usize, sx as usize));
                }
            }
        }
        out
    }
}

impl fmt::Display for TransformOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TransformOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformOp::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown transform {s:?} (expected none, hflip, rot_half_pi)"))
    }
}
