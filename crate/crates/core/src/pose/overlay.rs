use std::sync::OnceLock;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::heatmap::Heatmap;
use super::{Dims, PoseError};

const INFERNO_TABLE: &str = include_str!("../../data/inferno.txt");

/// Named 256-entry gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    #[default]
    Inferno,
    Gray,
}

fn inferno() -> &'static [[u8; 3]; 256] {
    static TABLE: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [[0u8; 3]; 256];
        let rows = INFERNO_TABLE
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut n = 0;
        for (slot, line) in table.iter_mut().zip(rows) {
            let mut it = line.split_whitespace().map(|v| v.parse::<u8>().expect("colormap entry"));
            *slot = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
            n += 1;
        }
        assert_eq!(n, 256, "colormap table must have 256 entries");
        table
    })
}

impl Colormap {
    /// Colour for `m` in `[0, 1]`; out-of-range values are clamped.
    pub fn color(self, m: f64) -> [u8; 3] {
        let idx = (m.clamp(0.0, 1.0) * 255.0).round() as usize;
        match self {
            Colormap::Inferno => inferno()[idx],
            Colormap::Gray => [idx as u8; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayParams {
    pub alpha: f64,
    #[serde(default)]
    pub colormap: Colormap,
}

impl Default for OverlayParams {
    fn default() -> Self {
        Self { alpha: 0.6, colormap: Colormap::Inferno }
    }
}

impl OverlayParams {
    pub fn validate(&self) -> Result<(), PoseError> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(PoseError::BadAlpha(self.alpha))
        }
    }
}

/// Normalized channel-maximum intensity, resampled to `dims`.
pub(crate) fn intensity(h: &Heatmap, dims: Dims) -> Vec<f64> {
    let h = h.resize_nearest(dims);
    let mut m = h.channel_max();
    let peak = m.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        m.iter_mut().for_each(|v| *v /= peak);
    }
    m
}

/// Blends the heatmap's channel maximum over `rgb`:
/// `out = (1 - a*m) * rgb + a*m * colormap(m)` with `m` normalized to `[0, 1]`.
///
/// When `rescale` is false the heatmap must already match the image size.
pub fn composite_overlay(
    rgb: &RgbImage,
    h: &Heatmap,
    params: &OverlayParams,
    rescale: bool,
) -> Result<RgbImage, PoseError> {
    params.validate()?;
    let dims = Dims::new(rgb.height(), rgb.width());
    if !rescale && h.dims() != dims {
        return Err(PoseError::DimMismatch { image: dims, heatmap: h.dims() });
    }
    let m = intensity(h, dims);
    let mut out = rgb.clone();
    for (i, px) in out.pixels_mut().enumerate() {
        let w = params.alpha * m[i];
        if w == 0.0 {
            continue;
        }
        let c = params.colormap.color(m[i]);
        let src = px.0;
        *px = Rgb(std::array::from_fn(|k| {
            ((1.0 - w) * src[k] as f64 + w * c[k] as f64).round().clamp(0.0, 255.0) as u8
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb() -> RgbImage {
        RgbImage::from_fn(8, 12, |x, y| Rgb([(x * 20) as u8, (y * 15) as u8, 77]))
    }

    #[test]
    fn table_endpoints() {
        assert_eq!(Colormap::Inferno.color(0.0), [0, 0, 4]);
        assert_eq!(Colormap::Inferno.color(1.0), [252, 255, 164]);
        assert_eq!(Colormap::Gray.color(0.5), [128, 128, 128]);
    }

    #[test]
    fn zero_heatmap_is_identity() {
        let img = rgb();
        let h = Heatmap::zeros(Dims::new(12, 8));
        let out = composite_overlay(&img, &h, &OverlayParams { alpha: 1.0, ..Default::default() }, false).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn zero_alpha_is_identity() {
        let img = rgb();
        let mut h = Heatmap::zeros(Dims::new(12, 8));
        h.set(3, 4, 4, 0.9);
        let out = composite_overlay(&img, &h, &OverlayParams { alpha: 0.0, ..Default::default() }, false).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn full_alpha_peak_is_pure_colormap() {
        let img = rgb();
        let mut h = Heatmap::zeros(Dims::new(12, 8));
        h.set(3, 4, 5, 0.7);
        let out = composite_overlay(&img, &h, &OverlayParams { alpha: 1.0, ..Default::default() }, false).unwrap();
        // m = 0.7 / 0.7 = 1 at the peak, so the blend weight is 1
        assert_eq!(out.get_pixel(5, 4).0, [252, 255, 164]);
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(0, 0));
    }

    #[test]
    fn half_weight_blend_by_hand() {
        let img = RgbImage::from_pixel(2, 2, Rgb([100, 100, 100]));
        let mut h = Heatmap::zeros(Dims::new(2, 2));
        h.set(0, 0, 0, 1.0);
        let out = composite_overlay(&img, &h, &OverlayParams { alpha: 0.5, colormap: Colormap::Gray }, false).unwrap();
        // 0.5 * 100 + 0.5 * 255 = 177.5 -> 178
        assert_eq!(out.get_pixel(0, 0).0, [178, 178, 178]);
    }

    #[test]
    fn mismatch_without_rescale_errors() {
        let h = Heatmap::zeros(Dims::new(3, 2));
        assert!(matches!(
            composite_overlay(&rgb(), &h, &OverlayParams::default(), false),
            Err(PoseError::DimMismatch { .. })
        ));
        let out = composite_overlay(&rgb(), &h, &OverlayParams::default(), true).unwrap();
        assert_eq!(out.dimensions(), (8, 12));
    }

    #[test]
    fn alpha_out_of_range() {
        let h = Heatmap::zeros(Dims::new(12, 8));
        let p = OverlayParams { alpha: 1.5, ..Default::default() };
        assert!(matches!(composite_overlay(&rgb(), &h, &p, false), Err(PoseError::BadAlpha(_))));
    }
}
