//! 64-bit DCT perceptual hash.
//!
//! Grayscale, bilinear resize to 32x32, 2-D DCT-II, keep the 8x8
//! low-frequency block. Each of the 64 coefficients (DC included) becomes one
//! bit: set when it exceeds the median of the 63 non-DC coefficients. Bit `k`
//! is coefficient `(k / 8, k % 8)` and sits at bit position `k` of the `u64`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::imaging::{self, Raster};

const SIZE: usize = 32;
const BLOCK: usize = 8;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn distance(self, other: PerceptualHash) -> u32 {
        hamming64(self, other)
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PerceptualHash({self})")
    }
}

impl FromStr for PerceptualHash {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(PerceptualHash)
    }
}

pub fn hamming64(a: PerceptualHash, b: PerceptualHash) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// `cos((2x + 1) u pi / 2N)` for the low-frequency rows only.
fn dct_table() -> &'static [[f64; SIZE]; BLOCK] {
    static TABLE: OnceLock<[[f64; SIZE]; BLOCK]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0.0; SIZE]; BLOCK];
        for (u, row) in t.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / (2 * SIZE) as f64)
                    .cos();
            }
        }
        t
    })
}

/// Low-frequency 8x8 block of the orthonormal 2-D DCT-II, row-major.
fn low_frequency_block(gray: &[u8]) -> [f64; BLOCK * BLOCK] {
    let t = dct_table();
    let norm = |u: usize| {
        if u == 0 {
            (1.0 / SIZE as f64).sqrt()
        } else {
            (2.0 / SIZE as f64).sqrt()
        }
    };
    // Rows first: tmp[y][v] = sum_x f(x, y) cos(.. x .. v)
    let mut tmp = [[0.0f64; BLOCK]; SIZE];
    for (y, row) in tmp.iter_mut().enumerate() {
        for (v, out) in row.iter_mut().enumerate() {
            *out = (0..SIZE)
                .map(|x| gray[y * SIZE + x] as f64 * t[v][x])
                .sum::<f64>()
                * norm(v);
        }
    }
    let mut block = [0.0f64; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            block[u * BLOCK + v] = (0..SIZE).map(|y| tmp[y][v] * t[u][y]).sum::<f64>() * norm(u);
        }
    }
    block
}

pub fn phash(r: &Raster) -> PerceptualHash {
    let gray = imaging::to_grayscale(r);
    let small = imaging::resize_bilinear(&gray, SIZE, SIZE).expect("fixed non-zero size");
    let block = low_frequency_block(small.pixels());
    let mut ac: Vec<f64> = block[1..].to_vec();
    ac.sort_by(|a, b| a.total_cmp(b));
    let median = ac[ac.len() / 2];
    let bits = block
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > median)
        .fold(0u64, |acc, (k, _)| acc | 1 << k);
    PerceptualHash(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn hamming_cases() {
        let a = PerceptualHash(0xDEAD_BEEF_0123_4567);
        assert_eq!(hamming64(a, a), 0);
        assert_eq!(hamming64(a, PerceptualHash(!a.0)), 64);
        assert_eq!(hamming64(PerceptualHash(0b1010), PerceptualHash(0b0110)), 2);
    }

    #[test]
    fn hex_round_trip() {
        let h = PerceptualHash(0x00ab_cdef_0000_0001);
        assert_eq!(h.to_string(), "00abcdef00000001");
        assert_eq!(h.to_string().parse::<PerceptualHash>().unwrap(), h);
    }

    #[test]
    fn identical_images_hash_equal() {
        let r = synth::image(2, 90, 70);
        assert_eq!(phash(&r), phash(&r.clone()));
    }

    #[test]
    fn dct_matches_naive_definition() {
        // Independent full 2-D sum for a couple of coefficients.
        let img = synth::image(12, 32, 32);
        let gray = imaging::to_grayscale(&img);
        let block = low_frequency_block(gray.pixels());
        let n = SIZE as f64;
        for &(u, v) in &[(0usize, 0usize), (1, 3), (7, 7), (5, 0)] {
            let mut s = 0.0;
            for y in 0..SIZE {
                for x in 0..SIZE {
                    s += gray.pixels()[y * SIZE + x] as f64
                        * (((2 * y + 1) * u) as f64 * std::f64::consts::PI / (2.0 * n)).cos()
                        * (((2 * x + 1) * v) as f64 * std::f64::consts::PI / (2.0 * n)).cos();
                }
            }
            let cu = if u == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            let cv = if v == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            assert!((block[u * BLOCK + v] - cu * cv * s).abs() < 1e-6);
        }
    }

    #[test]
    fn roughly_half_the_bits_are_set() {
        let h = phash(&synth::image(21, 128, 96));
        let ones = h.0.count_ones();
        // 31 non-DC coefficients exceed the median, plus possibly the DC bit.
        assert!((31..=32).contains(&ones), "{ones}");
    }
}
