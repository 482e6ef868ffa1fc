//! FAST-9 segment test, Harris scoring, intensity-centroid orientation and
//! the Gaussian pre-smoothing used before the binary tests.

/// Borrowed single-channel plane.
#[derive(Clone, Copy)]
pub(crate) struct Plane<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [u8],
}

impl Plane<'_> {
    #[inline]
    pub fn at(&self, x: isize, y: isize) -> i32 {
        self.data[y as usize * self.width + x as usize] as i32
    }
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC: usize = 9;

/// Largest threshold for which `(x, y)` still passes the 9-of-16 test, or
/// `None` if it fails at `threshold`.
fn fast_score(p: &Plane, x: isize, y: isize, threshold: i32) -> Option<i32> {
    let centre = p.at(x, y);
    let mut diffs = [0i32; 16];
    for (d, &(dx, dy)) in diffs.iter_mut().zip(&CIRCLE) {
        *d = p.at(x + dx, y + dy) - centre;
    }
    // Any 9-pixel arc contains at least two of the four compass points.
    let brighter = [0, 4, 8, 12]
        .iter()
        .filter(|&&i| diffs[i] > threshold)
        .count();
    let darker = [0, 4, 8, 12]
        .iter()
        .filter(|&&i| diffs[i] < -threshold)
        .count();
    if brighter < 2 && darker < 2 {
        return None;
    }
    let mut best = i32::MIN;
    for start in 0..16 {
        let mut lo_bright = i32::MAX;
        let mut lo_dark = i32::MAX;
        for k in 0..ARC {
            let d = diffs[(start + k) % 16];
            lo_bright = lo_bright.min(d);
            lo_dark = lo_dark.min(-d);
        }
        best = best.max(lo_bright).max(lo_dark);
    }
    (best > threshold).then_some(best)
}

/// FAST corners at least `border` pixels from every edge, after 3x3
/// non-maximum suppression on the FAST score. Ties go to the earlier pixel in
/// raster order. Output is in raster order.
pub(crate) fn detect_fast(p: &Plane, threshold: u8, border: usize) -> Vec<(usize, usize)> {
    let (w, h) = (p.width, p.height);
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let t = threshold as i32;
    let mut scores = vec![0i32; w * h];
    for y in border..h - border {
        for x in border..w - border {
            if let Some(s) = fast_score(p, x as isize, y as isize, t) {
                scores[y * w + x] = s;
            }
        }
    }
    let mut out = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let s = scores[y * w + x];
            if s == 0 {
                continue;
            }
            let idx = y * w + x;
            let suppressed = (-1isize..=1).any(|dy| {
                (-1isize..=1).any(|dx| {
                    if dx == 0 && dy == 0 {
                        return false;
                    }
                    let n = ((y as isize + dy) as usize) * w + (x as isize + dx) as usize;
                    scores[n] > s || (scores[n] == s && n < idx)
                })
            });
            if !suppressed {
                out.push((x, y));
            }
        }
    }
    out
}

/// Harris corner measure over a 7x7 window of Sobel gradients.
pub(crate) fn harris_response(p: &Plane, x: usize, y: usize, k: f64) -> f64 {
    const HALF: isize = 3;
    // Matches the usual normalisation so responses are O(1) for 8-bit input.
    let scale = 1.0 / (4.0 * 7.0 * 255.0);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let (x, y) = (x as isize, y as isize);
    for dy in -HALF..=HALF {
        for dx in -HALF..=HALF {
            let (cx, cy) = (x + dx, y + dy);
            let ix = (p.at(cx + 1, cy - 1) + 2 * p.at(cx + 1, cy) + p.at(cx + 1, cy + 1)
                - p.at(cx - 1, cy - 1)
                - 2 * p.at(cx - 1, cy)
                - p.at(cx - 1, cy + 1)) as f64
                * scale;
            let iy = (p.at(cx - 1, cy + 1) + 2 * p.at(cx, cy + 1) + p.at(cx + 1, cy + 1)
                - p.at(cx - 1, cy - 1)
                - 2 * p.at(cx, cy - 1)
                - p.at(cx + 1, cy - 1)) as f64
                * scale;
            a += ix * ix;
            b += iy * iy;
            c += ix * iy;
        }
    }
    a * b - c * c - k * (a + b) * (a + b)
}

pub(crate) const ORIENTATION_RADIUS: isize = 15;

/// Angle in `[0, 2pi)` of the intensity centroid of the radius-15 disc, in
/// image coordinates (y down).
pub(crate) fn centroid_orientation(p: &Plane, x: usize, y: usize) -> f64 {
    let (x, y) = (x as isize, y as isize);
    let r2 = ORIENTATION_RADIUS * ORIENTATION_RADIUS;
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
        for dx in -ORIENTATION_RADIUS..=ORIENTATION_RADIUS {
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let v = p.at(x + dx, y + dy) as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64)
        .atan2(m10 as f64)
        .rem_euclid(std::f64::consts::TAU)
}

/// Separable 7-tap Gaussian (sigma 2) with replicated borders.
pub(crate) fn gaussian_blur(p: &Plane) -> Vec<u8> {
    const TAPS: usize = 7;
    let sigma = 2.0f64;
    let mut k = [0.0f64; TAPS];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 3.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);

    let (w, h) = (p.width as isize, p.height as isize);
    let mut tmp = vec![0.0f64; p.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x + i as isize - 3).clamp(0, w - 1);
                acc += kv * p.at(sx, y) as f64;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0u8; p.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sy = (y + i as isize - 3).clamp(0, h - 1);
                acc += kv * tmp[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_image() -> (usize, usize, Vec<u8>) {
        // Bright square on dark background: four corners.
        let (w, h) = (40, 40);
        let mut data = vec![20u8; w * h];
        for y in 12..28 {
            for x in 12..28 {
                data[y * w + x] = 220;
            }
        }
        (w, h, data)
    }

    #[test]
    fn finds_square_corners() {
        let (w, h, data) = square_image();
        let p = Plane {
            width: w,
            height: h,
            data: &data,
        };
        let corners = detect_fast(&p, 20, 4);
        assert!(!corners.is_empty());
        for (x, y) in &corners {
            let near_corner = [(12, 12), (27, 12), (12, 27), (27, 27)]
                .iter()
                .any(|&(cx, cy): &(usize, usize)| x.abs_diff(cx) <= 2 && y.abs_diff(cy) <= 2);
            assert!(near_corner, "({x},{y})");
        }
    }

    #[test]
    fn flat_plane_has_no_corners() {
        let data = vec![128u8; 50 * 50];
        let p = Plane {
            width: 50,
            height: 50,
            data: &data,
        };
        assert!(detect_fast(&p, 20, 3).is_empty());
    }

    #[test]
    fn harris_prefers_corner_over_edge() {
        let (w, h, data) = square_image();
        let p = Plane {
            width: w,
            height: h,
            data: &data,
        };
        let corner = harris_response(&p, 12, 12, 0.04);
        let edge = harris_response(&p, 20, 12, 0.04);
        assert!(corner > 0.0);
        assert!(edge < corner);
    }

    #[test]
    fn orientation_points_at_bright_side() {
        let (w, h) = (40, 40);
        let mut data = vec![0u8; w * h];
        for y in 0..h {
            for x in 21..w {
                data[y * w + x] = 200;
            }
        }
        let p = Plane {
            width: w,
            height: h,
            data: &data,
        };
        let a = centroid_orientation(&p, 20, 20);
        assert!(a < 1e-9 || (std::f64::consts::TAU - a) < 1e-9, "{a}");
    }

    #[test]
    fn blur_keeps_constant() {
        let data = vec![77u8; 30 * 20];
        let p = Plane {
            width: 30,
            height: 20,
            data: &data,
        };
        assert!(gaussian_blur(&p).iter().all(|&v| v == 77));
    }
}
