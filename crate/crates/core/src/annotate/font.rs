//! Fixed bitmap font: 8x8 glyphs scaled by 12/7 so capitals are 12 px tall.

use font8x8::legacy::BASIC_LEGACY;
use image::{Rgb, RgbImage};

/// Horizontal advance per character in pixels.
pub const ADVANCE: i32 = 12;
/// Rendered cell height; capitals occupy the top 12 rows.
pub const CELL_HEIGHT: i32 = 14;
pub const CAP_HEIGHT: i32 = 12;

fn glyph(c: char) -> [u8; 8] {
    let code = c as usize;
    if code < 128 {
        BASIC_LEGACY[code]
    } else {
        BASIC_LEGACY['?' as usize]
    }
}

fn src(d: i32) -> usize {
    ((d * 7) / 12) as usize
}

pub fn text_width(text: &str) -> i32 {
    text.chars().count() as i32 * ADVANCE
}

/// Draws `text` with its top-left corner at `(x, y)`, clipped to the image.
pub fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, color: Rgb<u8>) {
    let (iw, ih) = (img.width() as i32, img.height() as i32);
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        let gx = x + i as i32 * ADVANCE;
        for dy in 0..CELL_HEIGHT {
            let bits = rows[src(dy).min(7)];
            for dx in 0..ADVANCE {
                if bits >> src(dx).min(7) & 1 == 1 {
                    let (px, py) = (gx + dx, y + dy);
                    if px >= 0 && py >= 0 && px < iw && py < ih {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capital_height_is_twelve() {
        let mut img = RgbImage::from_pixel(40, 20, Rgb([0, 0, 0]));
        draw_text(&mut img, 0, 0, "E", Rgb([255, 255, 255]));
        let lit_rows: Vec<u32> = (0..20).filter(|&y| (0..40).any(|x| img.get_pixel(x, y)[0] == 255)).collect();
        assert_eq!(lit_rows.len(), CAP_HEIGHT as usize);
        assert_eq!(lit_rows[0], 0);
    }

    #[test]
    fn clipped_drawing_does_not_panic() {
        let mut img = RgbImage::new(5, 5);
        draw_text(&mut img, -3, -4, "88", Rgb([1, 2, 3]));
    }
}
