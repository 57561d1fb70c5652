use std::fs;
use std::path::Path;

use super::joints::{Joint, JointSet, JOINT_COUNT};
use super::{Dims, PoseError};

/// Magic bytes opening a binary heatmap file.
pub const HEATMAP_MAGIC: &[u8; 4] = b"PKHM";
pub const HEATMAP_VERSION: u16 = 1;
const TEXT_MAGIC: &str = "PKHM-TEXT";
const HEADER_LEN: usize = 12;

/// A 16-channel joint heatmap. Values are non-negative and finite.
///
/// Binary layout (all little-endian): `"PKHM"`, version `u16`, height `u16`,
/// width `u16`, channels `u16` (= 16), then for each channel the rows in
/// order, each row its columns in order, as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    dims: Dims,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.cells() * JOINT_COUNT] }
    }

    /// Builds a heatmap from channel-major values.
    pub fn from_data(dims: Dims, data: Vec<f64>) -> Result<Self, PoseError> {
        if data.len() != dims.cells() * JOINT_COUNT {
            return Err(PoseError::InvalidHeatmap(format!(
                "expected {} values for {dims}x{JOINT_COUNT}, got {}",
                dims.cells() * JOINT_COUNT,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(PoseError::InvalidHeatmap(format!("value {bad} is negative or not finite")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn offset(&self, channel: usize, y: usize, x: usize) -> usize {
        (channel * self.dims.height as usize + y) * self.dims.width as usize + x
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(channel, y, x)]
    }

    /// Sets one cell. Negative or non-finite values are stored as zero.
    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: f64) {
        let i = self.offset(channel, y, x);
        self.data[i] = if value.is_finite() && value > 0.0 { value } else { 0.0 };
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.dims.cells();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn channel_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.dims.cells();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Per-pixel maximum over channels.
    pub fn channel_max(&self) -> Vec<f64> {
        let n = self.dims.cells();
        let mut out = vec![0.0f64; n];
        for c in 0..JOINT_COUNT {
            for (o, v) in out.iter_mut().zip(self.channel(c)) {
                *o = o.max(*v);
            }
        }
        out
    }

    /// Nearest-neighbour resampling to `dims`.
    pub fn resize_nearest(&self, dims: Dims) -> Heatmap {
        if dims == self.dims {
            return self.clone();
        }
        let (sh, sw) = (self.dims.height as usize, self.dims.width as usize);
        let (dh, dw) = (dims.height as usize, dims.width as usize);
        let cols: Vec<usize> = (0..dw).map(|x| x * sw / dw).collect();
        let mut out = Heatmap::zeros(dims);
        for c in 0..JOINT_COUNT {
            let src = self.channel(c);
            let dst = out.channel_mut(c);
            for y in 0..dh {
                let sy = y * sh / dh;
                for (x, sx) in cols.iter().enumerate() {
                    dst[y * dw + x] = src[sy * sw + sx];
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(HEATMAP_MAGIC);
        out.extend_from_slice(&HEATMAP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.dims.width as u16).to_le_bytes());
        out.extend_from_slice(&(JOINT_COUNT as u16).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Heatmap, PoseError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != HEATMAP_MAGIC {
            return Err(PoseError::Format("missing PKHM header".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let version = u16_at(4);
        if version != HEATMAP_VERSION {
            return Err(PoseError::Format(format!("unsupported heatmap version {version}")));
        }
        let dims = Dims::new(u16_at(6) as u32, u16_at(8) as u32);
        let channels = u16_at(10) as usize;
        if channels != JOINT_COUNT {
            return Err(PoseError::Format(format!("expected {JOINT_COUNT} channels, found {channels}")));
        }
        let expected = HEADER_LEN + dims.cells() * channels * 4;
        if bytes.len() != expected {
            return Err(PoseError::Format(format!(
                "heatmap body is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Heatmap::from_data(dims, data)
    }

    /// Plain-text interchange form: a `PKHM-TEXT 1 H W 16` line, then per
    /// channel a `# channel N` line followed by H rows of W values.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{TEXT_MAGIC} {HEATMAP_VERSION} {} {} {JOINT_COUNT}\n",
            self.dims.height, self.dims.width
        );
        let w = self.dims.width as usize;
        for c in 0..JOINT_COUNT {
            out.push_str(&format!("# channel {c}\n"));
            for row in self.channel(c).chunks(w) {
                let line: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Heatmap, PoseError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| PoseError::Format("empty heatmap text".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != TEXT_MAGIC {
            return Err(PoseError::Format(format!("bad heatmap text header {header:?}")));
        }
        let num = |s: &str| {
            s.parse::<u32>()
                .map_err(|e| PoseError::Format(format!("bad header field {s:?}: {e}")))
        };
        if num(fields[1])? != HEATMAP_VERSION as u32 {
            return Err(PoseError::Format(format!("unsupported heatmap version {}", fields[1])));
        }
        let dims = Dims::new(num(fields[2])?, num(fields[3])?);
        if num(fields[4])? as usize != JOINT_COUNT {
            return Err(PoseError::Format(format!("expected {JOINT_COUNT} channels")));
        }
        let mut data = Vec::with_capacity(dims.cells() * JOINT_COUNT);
        for line in lines.filter(|l| !l.starts_with('#')) {
            for tok in line.split_whitespace() {
                let v: f32 = tok
                    .parse()
                    .map_err(|e| PoseError::Format(format!("bad value {tok:?}: {e}")))?;
                data.push(v as f64);
            }
        }
        Heatmap::from_data(dims, data)
    }

    /// Reads either form, detected by the leading magic.
    pub fn read(path: &Path) -> Result<Heatmap, PoseError> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(TEXT_MAGIC.as_bytes()) {
            let text = std::str::from_utf8(&bytes).map_err(|e| PoseError::Format(e.to_string()))?;
            Heatmap::from_text(text)
        } else {
            Heatmap::from_bytes(&bytes)
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), PoseError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Per-channel argmax. Ties resolve to the smallest row, then the smallest
/// column; confidence is the channel maximum clamped to `[0, 1]`. A channel
/// whose maximum is zero yields the absent sentinel.
pub fn decode_joints(h: &Heatmap) -> JointSet {
    let dims = h.dims();
    let w = dims.width as usize;
    let mut set = JointSet::absent(dims);
    for (c, slot) in set.joints.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in h.channel(c).iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        if best_v > 0.0 {
            *slot = Joint::new((best % w) as f64, (best / w) as f64, best_v.min(1.0));
        }
    }
    set
}

/// Renders `confidence * exp(-d^2 / (2 sigma^2))` around every detected
/// joint; undetected joints give all-zero channels.
pub fn render_heatmap(joints: &JointSet, sigma: f64, dims: Dims) -> Result<Heatmap, PoseError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PoseError::BadSigma(sigma));
    }
    let (hh, ww) = (dims.height as usize, dims.width as usize);
    let denom = 2.0 * sigma * sigma;
    let mut out = Heatmap::zeros(dims);
    let mut row_gain = vec![0.0; hh];
    let mut col_gain = vec![0.0; ww];
    for (c, j) in joints.joints.iter().enumerate() {
        if !j.is_detected() {
            continue;
        }
        // The 2-D Gaussian factors into a row term and a column term.
        for (y, g) in row_gain.iter_mut().enumerate() {
            let dy = y as f64 - j.y;
            *g = (-dy * dy / denom).exp();
        }
        for (x, g) in col_gain.iter_mut().enumerate() {
            let dx = x as f64 - j.x;
            *g = j.confidence * (-dx * dx / denom).exp();
        }
        let chan = out.channel_mut(c);
        for (y, rg) in row_gain.iter().enumerate() {
            let row = &mut chan[y * ww..(y + 1) * ww];
            for (cell, cg) in row.iter_mut().zip(&col_gain) {
                *cell = rg * cg;
            }
        }
    }
    Ok(out)
}
