//! Overlay drawing: a 5x7 bitmap font and outline shapes.

use super::{Channels, Raster};

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        _ => [0; GLYPH_H],
    }
}

/// Integer pixel scale giving glyphs at least `glyph_height` pixels tall.
fn glyph_scale(glyph_height: usize) -> usize {
    glyph_height.div_ceil(GLYPH_H).max(1)
}

/// Rendered width in pixels of `text` at the given glyph height, one empty
/// glyph column between characters.
pub fn text_width(text: &str, glyph_height: usize) -> usize {
    let n = text.chars().count();
    if n == 0 {
        return 0;
    }
    (n * (GLYPH_W + 1) - 1) * glyph_scale(glyph_height)
}

fn put(r: &mut Raster, x: isize, y: isize, rgb: [u8; 3]) {
    if x < 0 || y < 0 || x as usize >= r.width() || y as usize >= r.height() {
        return;
    }
    let channels = r.channels();
    let px = r.pixel_mut(x as usize, y as usize);
    match channels {
        Channels::Rgb => px.copy_from_slice(&rgb),
        Channels::Gray => {
            px[0] = (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64).round()
                as u8
        }
    }
}

/// Draw `text` with its top-left corner at `(x, y)` in `color`, with a one
/// pixel outline in `outline`. Glyphs are nearest-neighbour scaled from the
/// 5x7 font; anything off-canvas is clipped.
pub fn draw_text(
    r: &mut Raster,
    text: &str,
    x: isize,
    y: isize,
    glyph_height: usize,
    color: [u8; 3],
    outline: [u8; 3],
) {
    let scale = glyph_scale(glyph_height) as isize;
    let cols = text.chars().count() * (GLYPH_W + 1);
    let mask_w = cols as isize * scale;
    let mask_h = GLYPH_H as isize * scale;
    if mask_w == 0 {
        return;
    }
    let mut mask = vec![false; (mask_w * mask_h) as usize];
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        for (gy, bits) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - gx) & 1 == 0 {
                    continue;
                }
                let ox = (i * (GLYPH_W + 1) + gx) as isize * scale;
                let oy = gy as isize * scale;
                for sy in 0..scale {
                    for sx in 0..scale {
                        mask[((oy + sy) * mask_w + ox + sx) as usize] = true;
                    }
                }
            }
        }
    }
    let at = |mx: isize, my: isize| {
        mx >= 0 && my >= 0 && mx < mask_w && my < mask_h && mask[(my * mask_w + mx) as usize]
    };
    // Outline first: every non-glyph pixel touching a glyph pixel.
    for my in -1..=mask_h {
        for mx in -1..=mask_w {
            if at(mx, my) {
                continue;
            }
            let touches = (-1..=1).any(|dy| (-1..=1).any(|dx| at(mx + dx, my + dy)));
            if touches {
                put(r, x + mx, y + my, outline);
            }
        }
    }
    for my in 0..mask_h {
        for mx in 0..mask_w {
            if at(mx, my) {
                put(r, x + mx, y + my, color);
            }
        }
    }
}

/// Axis-aligned rectangle border covering `[x0, x1) x [y0, y1)`, `stroke`
/// pixels thick, drawn inward.
pub fn draw_rect_outline(
    r: &mut Raster,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    stroke: usize,
    rgb: [u8; 3],
) {
    for y in y0..y1.min(r.height()) {
        for x in x0..x1.min(r.width()) {
            let edge = x < x0 + stroke || x + stroke >= x1 || y < y0 + stroke || y + stroke >= y1;
            if edge {
                put(r, x as isize, y as isize, rgb);
            }
        }
    }
}

/// Ellipse outline centred at `(cx, cy)` with semi-axes `(ax, ay)`. A pixel is
/// painted when its centre lies inside the outer ellipse but not inside the
/// ellipse shrunk by `stroke` on both axes.
pub fn draw_ellipse_outline(
    r: &mut Raster,
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    stroke: f64,
    rgb: [u8; 3],
) {
    let inside = |px: f64, py: f64, a: f64, b: f64| {
        if a <= 0.0 || b <= 0.0 {
            return false;
        }
        let u = (px - cx) / a;
        let v = (py - cy) / b;
        u * u + v * v <= 1.0
    };
    let (ix, iy) = (ax - stroke, ay - stroke);
    for y in 0..r.height() {
        for x in 0..r.width() {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if inside(px, py, ax, ay) && !inside(px, py, ix, iy) {
                put(r, x as isize, y as isize, rgb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_is_drawn_with_outline() {
        let mut r = Raster::filled(80, 20, [100, 100, 100]).unwrap();
        draw_text(&mut r, "TEXT", 2, 2, 14, [255, 255, 255], [0, 0, 0]);
        let px: Vec<&[u8]> = (0..r.height())
            .flat_map(|y| (0..r.width()).map(move |x| (x, y)))
            .map(|(x, y)| r.pixel(x, y))
            .collect();
        assert!(px.iter().any(|p| *p == [255, 255, 255]));
        assert!(px.iter().any(|p| *p == [0, 0, 0]));
        // Top row of the 'T' bar sits at the origin; the pixel above is outline.
        assert_eq!(r.pixel(2, 2), &[255, 255, 255]);
        assert_eq!(r.pixel(2, 1), &[0, 0, 0]);
    }

    #[test]
    fn width_scales_with_height() {
        assert_eq!(text_width("AB", 7), 11);
        assert_eq!(text_width("AB", 14), 22);
        assert_eq!(text_width("", 14), 0);
    }

    #[test]
    fn rect_outline_leaves_interior() {
        let mut r = Raster::filled(20, 20, [0, 0, 0]).unwrap();
        draw_rect_outline(&mut r, 2, 2, 18, 18, 4, [255, 0, 0]);
        assert_eq!(r.pixel(2, 2), &[255, 0, 0]);
        assert_eq!(r.pixel(5, 10), &[255, 0, 0]);
        assert_eq!(r.pixel(6, 10), &[0, 0, 0]);
        assert_eq!(r.pixel(1, 1), &[0, 0, 0]);
    }

    #[test]
    fn ellipse_outline_ring() {
        let mut r = Raster::filled(40, 40, [0, 0, 0]).unwrap();
        draw_ellipse_outline(&mut r, 20.0, 20.0, 10.0, 10.0, 4.0, [255, 0, 0]);
        assert_eq!(r.pixel(20, 20), &[0, 0, 0]);
        assert_eq!(r.pixel(11, 20), &[255, 0, 0]);
        assert_eq!(r.pixel(2, 2), &[0, 0, 0]);
    }
}
