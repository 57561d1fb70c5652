use serde::{Deserialize, Serialize};

use super::Part;

/// How many input tokens an image costs on a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageTokenFormula {
    /// Fixed count per image regardless of size.
    Constant { tokens: u64 },
    /// `base + per_tile * tiles`, tiling the image in `tile_px` squares.
    Tiles { tile_px: u32, per_tile: u64, base: u64 },
}

impl Default for ImageTokenFormula {
    fn default() -> Self {
        ImageTokenFormula::Constant { tokens: 255 }
    }
}

impl ImageTokenFormula {
    pub fn tokens(&self, width: u32, height: u32) -> u64 {
        match *self {
            ImageTokenFormula::Constant { tokens } => tokens,
            ImageTokenFormula::Tiles { tile_px, per_tile, base } => {
                let t = tile_px.max(1);
                base + per_tile * (width.div_ceil(t) as u64) * (height.div_ceil(t) as u64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenEstimator {
    pub image: ImageTokenFormula,
    /// Text tokens are `ceil(bytes / text_bytes_per_token)`.
    pub text_bytes_per_token: u64,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        Self { image: ImageTokenFormula::default(), text_bytes_per_token: 4 }
    }
}

impl TokenEstimator {
    pub fn text(&self, s: &str) -> u64 {
        (s.len() as u64).div_ceil(self.text_bytes_per_token.max(1))
    }

    pub fn parts(&self, parts: &[Part]) -> u64 {
        parts
            .iter()
            .map(|p| match p {
                Part::Text { text } => self.text(text),
                Part::Image { width, height, .. } => self.image.tokens(*width, *height),
            })
            .sum()
    }
}

/// Estimated input tokens for `parts` with the default text approximation.
pub fn estimate_tokens(parts: &[Part], formula: &ImageTokenFormula) -> u64 {
    TokenEstimator { image: *formula, ..Default::default() }.parts(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Part {
        Part::Image { content_id: "sha256:00".into(), media_type: "image/png".into(), width: 256, height: 384 }
    }

    #[test]
    fn default_image_cost() {
        assert_eq!(estimate_tokens(&[image()], &ImageTokenFormula::default()), 255);
        assert_eq!(estimate_tokens(&[], &ImageTokenFormula::default()), 0);
    }

    #[test]
    fn text_rounds_up() {
        let est = TokenEstimator::default();
        assert_eq!(est.text(""), 0);
        assert_eq!(est.text("abcd"), 1);
        assert_eq!(est.text("abcde"), 2);
        assert_eq!(est.parts(&[Part::text("abcdefgh"), image()]), 257);
    }

    #[test]
    fn tiles() {
        let f = ImageTokenFormula::Tiles { tile_px: 512, per_tile: 170, base: 85 };
        assert_eq!(f.tokens(256, 384), 255);
        assert_eq!(f.tokens(1024, 513), 85 + 170 * 4);
    }
}
