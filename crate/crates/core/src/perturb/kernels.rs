use serde::{Deserialize, Serialize};

use super::PerturbError;
use crate::image::{Image, BLACK, WHITE};
use crate::rng::RandomStream;

/// Axis-aligned rectangle, half-open on the right and bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

/// Adds `N(0, sigma^2)` per channel, then clamps to `[0, 255]` and rounds.
pub fn kernel_gaussian_noise(
    img: &Image,
    sigma: f64,
    rng: &mut RandomStream,
) -> Result<Image, PerturbError> {
    if !(sigma >= 0.0) {
        return Err(PerturbError::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut out = img.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for v in out.pixels_mut() {
        let noisy = *v as f64 + sigma * rng.standard_normal();
        *v = noisy.clamp(0.0, 255.0).round() as u8;
    }
    Ok(out)
}

/// Each pixel is hit with probability `p`; hits become black or white with equal odds.
pub fn kernel_salt_pepper(img: &Image, p: f64, rng: &mut RandomStream) -> Result<Image, PerturbError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(PerturbError::InvalidParameter(format!("p must lie in [0, 1], got {p}")));
    }
    let mut out = img.clone();
    if p == 0.0 {
        return Ok(out);
    }
    for px in out.pixels_mut().chunks_exact_mut(3) {
        if rng.next_f64() < p {
            px.copy_from_slice(if rng.coin() { &WHITE } else { &BLACK });
        }
    }
    Ok(out)
}

/// Line-kernel blur at an angle drawn uniformly from `[0, 180)` degrees.
pub fn kernel_motion_blur(
    img: &Image,
    length: u32,
    rng: &mut RandomStream,
) -> Result<Image, PerturbError> {
    let degrees = rng.uniform(0.0, 180.0);
    motion_blur_at_angle(img, length, degrees)
}

/// Averages `length` taps along a line through each pixel. Taps are the
/// nearest pixels to `t * (cos a, sin a)` for `t` in `-(length/2)..=length/2`;
/// out-of-canvas taps replicate the nearest edge pixel. Integer averaging
/// keeps constant images fixed.
pub fn motion_blur_at_angle(img: &Image, length: u32, degrees: f64) -> Result<Image, PerturbError> {
    if length == 0 || length.is_multiple_of(2) {
        return Err(PerturbError::InvalidParameter(format!(
            "blur length must be odd and >= 1, got {length}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if length > w.min(h) {
        return Err(PerturbError::Degenerate(format!(
            "blur length {length} exceeds image extent {w}x{h}"
        )));
    }
    if length == 1 {
        return Ok(img.clone());
    }
    let half = (length / 2) as i64;
    let rad = degrees.to_radians();
    let (c, s) = (libm::cos(rad), libm::sin(rad));
    let taps: Vec<(i64, i64)> = (-half..=half)
        .map(|t| (libm::round(t as f64 * c) as i64, libm::round(t as f64 * s) as i64))
        .collect();

    let src = img.pixels();
    let mut out = vec![0u8; src.len()];
    let (wi, hi) = (w as i64, h as i64);
    let n = length;
    for y in 0..hi {
        for x in 0..wi {
            let mut acc = [0u32; 3];
            for &(dx, dy) in &taps {
                let sx = (x + dx).clamp(0, wi - 1);
                let sy = (y + dy).clamp(0, hi - 1);
                let i = ((sy * wi + sx) * 3) as usize;
                acc[0] += src[i] as u32;
                acc[1] += src[i + 1] as u32;
                acc[2] += src[i + 2] as u32;
            }
            let o = ((y * wi + x) * 3) as usize;
            for ch in 0..3 {
                out[o + ch] = ((acc[ch] + n / 2) / n) as u8;
            }
        }
    }
    Image::new(w, h, out).map_err(|e| PerturbError::Degenerate(e.to_string()))
}

/// Fills one rectangle of roughly `area_fraction * W * H` pixels with `fill`.
/// Returns the rectangle that was painted, or `None` when the fraction is zero.
pub fn kernel_occlusion(
    img: &Image,
    area_fraction: f64,
    fill: [u8; 3],
    rng: &mut RandomStream,
) -> Result<(Image, Option<Rect>), PerturbError> {
    if !(0.0..1.0).contains(&area_fraction) {
        return Err(PerturbError::InvalidParameter(format!(
            "area fraction must lie in [0, 1), got {area_fraction}"
        )));
    }
    if area_fraction == 0.0 {
        return Ok((img.clone(), None));
    }
    let (w, h) = (img.width(), img.height());
    if w < 4 || h < 4 {
        return Err(PerturbError::Degenerate(format!(
            "occlusion needs at least a 4x4 image, got {w}x{h}"
        )));
    }
    let target = (area_fraction * w as f64 * h as f64).round().max(1.0);
    let aspect = rng.uniform(0.5, 2.0);
    let rw = (libm::sqrt(target * aspect).round() as u32).clamp(1, w);
    let rh = ((target / rw as f64).round() as u32).clamp(1, h);
    let x = rng.below((w - rw + 1) as u64) as u32;
    let y = rng.below((h - rh + 1) as u64) as u32;
    let rect = Rect {
        x,
        y,
        width: rw,
        height: rh,
    };
    let mut out = img.clone();
    out.fill_rect(x, y, x + rw, y + rh, fill);
    Ok((out, Some(rect)))
}

/// Rotates by `+max_degrees` or `-max_degrees` (sign drawn from `rng`).
pub fn kernel_rotation(
    img: &Image,
    max_degrees: f64,
    fill: [u8; 3],
    rng: &mut RandomStream,
) -> Result<Image, PerturbError> {
    if !(0.0..45.0).contains(&max_degrees) {
        return Err(PerturbError::InvalidParameter(format!(
            "rotation must lie in [0, 45) degrees, got {max_degrees}"
        )));
    }
    let sign = if rng.coin() { 1.0 } else { -1.0 };
    Ok(rotate(img, sign * max_degrees, fill))
}

/// Rotation about the canvas center with bilinear sampling. Samples that fall
/// outside the source read `fill`. Positive angles turn content clockwise on
/// screen (y axis points down).
pub fn rotate(img: &Image, degrees: f64, fill: [u8; 3]) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let rad = degrees.to_radians();
    let (c, s) = (libm::cos(rad), libm::sin(rad));
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let src = img.pixels();
    let sample = |x: i64, y: i64, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            fill[ch] as f64
        } else {
            src[((y * w + x) * 3) as usize + ch] as f64
        }
    };

    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // Inverse mapping: rotate the output coordinate by -angle.
            let sx = c * dx + s * dy + cx - 0.5;
            let sy = -s * dx + c * dy + cy - 0.5;
            let x0 = libm::floor(sx);
            let y0 = libm::floor(sy);
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let o = ((y * w + x) * 3) as usize;
            for ch in 0..3 {
                let top = sample(x0, y0, ch) * (1.0 - fx) + sample(x0 + 1, y0, ch) * fx;
                let bottom = sample(x0, y0 + 1, ch) * (1.0 - fx) + sample(x0 + 1, y0 + 1, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[o + ch] = v.clamp(0.0, 255.0).round() as u8;
            }
        }
    }
    Image::new(img.width(), img.height(), out).expect("dimensions unchanged")
}
