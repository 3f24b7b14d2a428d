//! 8-bit RGB rasters and the PNG boundary.
//!
//! Every input is normalized to [`Image`] at decode time: grayscale is
//! expanded, 16-bit samples are truncated to their high byte, and alpha is
//! composited over white.

use std::io::Cursor;

use thiserror::Error;

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, {width}x{height} RGB needs {expected}")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("malformed PNG at byte offset {offset} (chunk {chunk}): {reason}")]
    MalformedPng {
        offset: usize,
        chunk: String,
        reason: String,
    },
    #[error("PNG encode failed: {0}")]
    Encode(String),
}

/// Row-major RGB raster, three bytes per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("bytes", &self.pixels.len())
            .finish()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Solid-color image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Fills the half-open rectangle `[x0, x1) x [y0, y1)`, clipped to the canvas.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, rgb: [u8; 3]) {
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, rgb);
            }
        }
    }
}

/// Decodes any PNG color type / bit depth into 8-bit RGB.
pub fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    let fail = |err: png::DecodingError| match locate_fault(bytes) {
        Some(fault) => fault,
        None => ImageError::MalformedPng {
            offset: bytes.len(),
            chunk: "IDAT".to_string(),
            reason: err.to_string(),
        },
    };

    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(fail)?;
    let size = reader.output_buffer_size().ok_or_else(|| ImageError::MalformedPng {
        offset: 16,
        chunk: "IHDR".to_string(),
        reason: "image too large".to_string(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(fail)?;
    buf.truncate(frame.buffer_size());

    let (width, height) = (frame.width, frame.height);
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        // EXPAND turns palettes into RGB(A); kept for exhaustiveness.
        png::ColorType::Indexed => {
            return Err(ImageError::MalformedPng {
                offset: 0,
                chunk: "PLTE".to_string(),
                reason: "palette was not expanded".to_string(),
            })
        }
    };
    let line = frame.line_size;
    let mut rgb = Vec::with_capacity(width as usize * height as usize * 3);
    for row in buf.chunks(line).take(height as usize) {
        for px in row[..width as usize * channels].chunks_exact(channels) {
            let out = match channels {
                1 => [px[0]; 3],
                2 => [composite_over_white(px[0], px[1]); 3],
                3 => [px[0], px[1], px[2]],
                _ => [
                    composite_over_white(px[0], px[3]),
                    composite_over_white(px[1], px[3]),
                    composite_over_white(px[2], px[3]),
                ],
            };
            rgb.extend_from_slice(&out);
        }
    }
    Image::new(width, height, rgb)
}

/// `c * a + 255 * (1 - a)` in 8-bit fixed point, rounded to nearest.
#[inline]
pub fn composite_over_white(channel: u8, alpha: u8) -> u8 {
    let c = channel as u32;
    let a = alpha as u32;
    ((c * a + 255 * (255 - a) + 127) / 255) as u8
}

/// Encodes with fixed filter and compression settings so equal images give equal bytes.
pub fn encode_png(img: &Image) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::Paeth);
        let mut writer = enc
            .write_header()
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        writer
            .finish()
            .map_err(|e| ImageError::Encode(e.to_string()))?;
    }
    Ok(out)
}

const SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

/// Walks the chunk stream and reports the first structural fault, if any.
fn locate_fault(bytes: &[u8]) -> Option<ImageError> {
    let fault = |offset: usize, chunk: &str, reason: &str| {
        Some(ImageError::MalformedPng {
            offset,
            chunk: chunk.to_string(),
            reason: reason.to_string(),
        })
    };
    if bytes.len() < 8 || bytes[..8] != SIGNATURE {
        return fault(0, "signature", "missing PNG signature");
    }
    let mut pos = 8;
    let mut seen_iend = false;
    while pos < bytes.len() {
        if bytes.len() - pos < 12 {
            return fault(pos, "?", "truncated chunk header");
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let kind = String::from_utf8_lossy(&bytes[pos + 4..pos + 8]).into_owned();
        let end = pos + 12 + len;
        if end > bytes.len() {
            return fault(pos, &kind, "chunk length runs past end of data");
        }
        let stored = u32::from_be_bytes(bytes[end - 4..end].try_into().unwrap());
        if crc32fast::hash(&bytes[pos + 4..end - 4]) != stored {
            return fault(pos, &kind, "CRC mismatch");
        }
        if kind == "IEND" {
            seen_iend = true;
            break;
        }
        pos = end;
    }
    if !seen_iend {
        return fault(bytes.len(), "IEND", "missing IEND chunk");
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_raw(w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            let mut writer = enc.write_header().unwrap();
            writer.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn white_pixel_decodes() {
        let bytes = encode_raw(1, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[255, 255, 255]);
        let img = decode_png(&bytes).unwrap();
        assert_eq!(img, Image::new(1, 1, vec![255, 255, 255]).unwrap());
    }

    #[test]
    fn transparent_black_composites_to_white() {
        let bytes = encode_raw(1, 1, png::ColorType::Rgba, png::BitDepth::Eight, &[0, 0, 0, 0]);
        assert_eq!(decode_png(&bytes).unwrap().pixels(), &[255, 255, 255]);
    }

    #[test]
    fn alpha_compositing_matches_float_formula() {
        for a in 0..=255u32 {
            for c in [0u32, 17, 128, 200, 255] {
                let expected = (c as f64 * a as f64 / 255.0 + 255.0 * (1.0 - a as f64 / 255.0)).round();
                assert_eq!(composite_over_white(c as u8, a as u8) as f64, expected, "c={c} a={a}");
            }
        }
    }

    #[test]
    fn grayscale_and_sixteen_bit_inputs_normalize() {
        let gray = encode_raw(2, 1, png::ColorType::Grayscale, png::BitDepth::Eight, &[10, 250]);
        assert_eq!(decode_png(&gray).unwrap().pixels(), &[10, 10, 10, 250, 250, 250]);

        let ga = encode_raw(1, 1, png::ColorType::GrayscaleAlpha, png::BitDepth::Eight, &[0, 255]);
        assert_eq!(decode_png(&ga).unwrap().pixels(), &[0, 0, 0]);

        let deep = encode_raw(1, 1, png::ColorType::Rgb, png::BitDepth::Sixteen, &[0x12, 0x34, 0xAB, 0xCD, 0xFF, 0x00]);
        assert_eq!(decode_png(&deep).unwrap().pixels(), &[0x12, 0xAB, 0xFF]);
    }

    #[test]
    fn encode_is_deterministic_and_round_trips() {
        let img = Image::new(1, 1, vec![0, 0, 0]).unwrap();
        let a = encode_png(&img).unwrap();
        let b = encode_png(&img.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(decode_png(&a).unwrap(), img);
    }

    #[test]
    fn malformed_png_names_offset_and_chunk() {
        let img = Image::filled(4, 4, [9, 8, 7]).unwrap();
        let mut bytes = encode_png(&img).unwrap();
        // Corrupt a byte inside the IHDR payload.
        bytes[20] ^= 0xFF;
        match decode_png(&bytes) {
            Err(ImageError::MalformedPng { offset, chunk, .. }) => {
                assert_eq!(offset, 8);
                assert_eq!(chunk, "IHDR");
            }
            other => panic!("unexpected {other:?}"),
        }

        match decode_png(b"not a png") {
            Err(ImageError::MalformedPng { offset, chunk, .. }) => {
                assert_eq!(offset, 0);
                assert_eq!(chunk, "signature");
            }
            other => panic!("unexpected {other:?}"),
        }

        let truncated = &encode_png(&img).unwrap()[..40];
        assert!(matches!(decode_png(truncated), Err(ImageError::MalformedPng { .. })));
    }

    #[test]
    fn constructor_checks_invariants() {
        assert!(matches!(Image::new(0, 3, vec![]), Err(ImageError::EmptyDimensions { .. })));
        assert!(matches!(Image::new(2, 2, vec![0; 11]), Err(ImageError::BufferSize { .. })));
    }
}
