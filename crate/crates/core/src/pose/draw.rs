use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use super::heatmap::Heatmap;
use super::joints::{JointSet, SKELETON};
use super::overlay::{intensity, Colormap};
use super::{Dims, PoseError};

const BONE: Rgb<u8> = Rgb([0, 220, 255]);
const JOINT: Rgb<u8> = Rgb([255, 64, 64]);

/// PNG bytes for an RGB image.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, PoseError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// The heatmap's channel maximum rendered through `colormap` at `dims`.
pub fn heatmap_image(h: &Heatmap, dims: Dims, colormap: Colormap) -> RgbImage {
    let m = intensity(h, dims);
    RgbImage::from_fn(dims.width, dims.height, |x, y| {
        Rgb(colormap.color(m[(y * dims.width + x) as usize]))
    })
}

/// Skeleton drawing of detected joints on a black canvas the size of the
/// joint set's frame.
pub fn joint_image(joints: &JointSet) -> RgbImage {
    let d = joints.source_dims;
    let mut img = RgbImage::new(d.width, d.height);
    for (a, b) in SKELETON {
        let (ja, jb) = (joints.get(a), joints.get(b));
        if ja.is_detected() && jb.is_detected() {
            line(&mut img, (ja.x as i64, ja.y as i64), (jb.x as i64, jb.y as i64), BONE);
        }
    }
    for (_, j) in joints.iter().filter(|(_, j)| j.is_detected()) {
        dot(&mut img, j.x as i64, j.y as i64, 3, JOINT);
    }
    img
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

// Bresenham
fn line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn dot(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
    for y in -r..=r {
        for x in -r..=r {
            if x * x + y * y <= r * r {
                put(img, cx + x, cy + y, c);
            }
        }
    }
}
