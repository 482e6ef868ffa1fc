//! Seeded procedural images standing in for a photographic corpus: a colour
//! gradient, low-frequency texture and a pile of random polygons and ellipses.
//! The same seed always yields the same raster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{Channels, Raster};

// Photographs have strongly correlated colour channels: a random brightness
// plus a modest per-channel tint.
fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let luma = rng.random_range(15.0..240.0);
    [
        luma + rng.random_range(-35.0..35.0),
        luma + rng.random_range(-35.0..35.0),
        luma + rng.random_range(-35.0..35.0),
    ]
}

/// Point-in-polygon by ray casting.
fn inside_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

enum Shape {
    Polygon(Vec<(f64, f64)>),
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        rot: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Polygon(p) => inside_polygon(x, y, p),
            Shape::Ellipse { cx, cy, a, b, rot } => {
                let (s, c) = rot.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = (c * dx + s * dy) / a;
                let v = (-s * dx + c * dy) / b;
                u * u + v * v <= 1.0
            }
        }
    }
}

/// Generate a `width x height` RGB image from `seed`.
pub fn image(seed: u64, width: usize, height: usize) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A6E);
    let (w, h) = (width as f64, height as f64);

    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gs, gc) = angle.sin_cos();

    // Coarse value-noise lattice, bilinearly upsampled.
    const GRID: usize = 6;
    let lattice: Vec<f64> = (0..(GRID + 1) * (GRID + 1) * 3)
        .map(|_| rng.random_range(-25.0..25.0))
        .collect();

    let n_shapes = rng.random_range(10..20);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let size = rng.random_range(0.08..0.35) * w.min(h);
        let shape = if rng.random_bool(0.6) {
            let n = rng.random_range(3..7);
            let mut pts: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let t =
                        i as f64 / n as f64 * std::f64::consts::TAU + rng.random_range(-0.4..0.4);
                    let r = size * rng.random_range(0.5..1.0);
                    (cx + r * t.cos(), cy + r * t.sin())
                })
                .collect();
            pts.dedup();
            Shape::Polygon(pts)
        } else {
            Shape::Ellipse {
                cx,
                cy,
                a: size * rng.random_range(0.4..1.0),
                b: size * rng.random_range(0.4..1.0),
                rot: rng.random_range(0.0..std::f64::consts::PI),
            }
        };
        let color = random_color(&mut rng);
        // Some shapes carry stripes so corners appear inside them too.
        let stripes = rng.random_bool(0.3).then(|| {
            let period = rng.random_range(3.0..9.0);
            let dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
            (period, dir.sin_cos())
        });
        shapes.push((shape, color, stripes));
    }

    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((px / w - 0.5) * gc + (py / h - 0.5) * gs) + 0.75).clamp(0.0, 1.5) / 1.5;
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = c0[c] + (c1[c] - c0[c]) * t;
            }
            for (shape, color, stripes) in &shapes {
                if shape.contains(px, py) {
                    let mut col = *color;
                    if let Some((period, (s, c))) = stripes {
                        if ((px * c + py * s) / period).floor() as i64 % 2 == 0 {
                            col = [255.0 - col[0], 255.0 - col[1], 255.0 - col[2]];
                        }
                    }
                    rgb = col;
                }
            }
            let gx = px / w * GRID as f64;
            let gy = py / h * GRID as f64;
            let (ix, iy) = ((gx as usize).min(GRID - 1), (gy as usize).min(GRID - 1));
            let (fx, fy) = (gx - ix as f64, gy - iy as f64);
            for (c, v) in rgb.iter_mut().enumerate() {
                let at = |xx: usize, yy: usize| lattice[(yy * (GRID + 1) + xx) * 3 + c];
                let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
                let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
                *v += top * (1.0 - fy) + bottom * fy;
            }
            pixels.extend(rgb.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    Raster::new(width, height, Channels::Rgb, pixels).expect("buffer sized from dimensions")
}

/// Id of the `i`-th synthetic corpus image.
pub fn corpus_id(i: usize) -> String {
    format!("img{i:05}")
}

/// Image `i` of a synthetic corpus, 192-320 by 144-256 pixels; depends only
/// on `(seed, i)`.
pub fn corpus_image(seed: u64, i: usize) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let w = rng.random_range(192..=320);
    let h = rng.random_range(144..=256);
    image(rng.random(), w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        assert_eq!(image(4, 64, 48), image(4, 64, 48));
        assert_ne!(image(4, 64, 48), image(5, 64, 48));
    }

    #[test]
    fn not_flat() {
        let r = image(9, 80, 60);
        let min = r.pixels().iter().min().unwrap();
        let max = r.pixels().iter().max().unwrap();
        assert!(max - min > 100);
    }
}
