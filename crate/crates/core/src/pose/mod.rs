//! Pose-map numerics: heatmap decoding and rendering, overlays, keypoint
//! documents, PCKh and geometric transforms.
//!
//! Coordinates follow image conventions: `x` is the column, `y` the row,
//! origin top-left. Heatmaps are stored channel-major.

mod draw;
mod heatmap;
mod joints;
mod metrics;
mod overlay;
mod transform;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use draw::{encode_png, heatmap_image, joint_image};
pub use heatmap::{decode_joints, render_heatmap, Heatmap, HEATMAP_MAGIC, HEATMAP_VERSION};
pub use joints::{joints_from_text, joints_to_text, Joint, JointId, JointSet, JOINT_COUNT, SKELETON};
pub use metrics::pckh;
pub use overlay::{composite_overlay, Colormap, OverlayParams};
pub use transform::TransformOp;

/// Default Gaussian width for rendered heatmaps, in pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Spatial size as (height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: u32,
    pub width: u32,
}

impl Dims {
    pub const fn new(height: u32, width: u32) -> Self {
        Self { height, width }
    }

    pub fn transposed(self) -> Self {
        Self { height: self.width, width: self.height }
    }

    pub fn cells(self) -> usize {
        self.height as usize * self.width as usize
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl std::str::FromStr for Dims {
    type Err = PoseError;

    /// Parses `HEIGHTxWIDTH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| PoseError::Format(format!("expected HEIGHTxWIDTH, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|e| PoseError::Format(format!("bad dimension {v:?}: {e}")))
        };
        Ok(Dims::new(parse(h)?, parse(w)?))
    }
}

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("dimension mismatch: image is {image}, heatmap is {heatmap}")]
    DimMismatch { image: Dims, heatmap: Dims },
    #[error("ground truth has no evaluable joints")]
    NoEvaluableJoints,
    #[error("head size must be positive, got {0}")]
    BadHeadSize(f64),
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("overlay alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("invalid heatmap: {0}")]
    InvalidHeatmap(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
