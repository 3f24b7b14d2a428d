use crate::image::Image;

// 5x7 bitmaps, one row per byte, bit 4 is the leftmost column.
const GLYPHS: [(char, [u8; 7]); 5] = [
    ('A', [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
];

pub const GLYPH_W: u32 = 5;
pub const GLYPH_H: u32 = 7;

/// Draws `ch` with its top-left at `(x, y)`, each glyph cell `scale` pixels wide.
/// Characters without a bitmap are skipped.
pub fn draw_glyph(img: &mut Image, ch: char, x: u32, y: u32, scale: u32, rgb: [u8; 3]) {
    let Some((_, rows)) = GLYPHS.iter().find(|(c, _)| *c == ch) else {
        return;
    };
    for (r, bits) in rows.iter().enumerate() {
        for c in 0..GLYPH_W {
            if bits & (1 << (GLYPH_W - 1 - c)) != 0 {
                let px = x + c * scale;
                let py = y + r as u32 * scale;
                img.fill_rect(px, py, px + scale, py + scale, rgb);
            }
        }
    }
}
