//! Oriented FAST keypoints with steered binary intensity tests, capped at the
//! strongest few hundred per image, plus the PCA reduction to 128-bit codes.

mod fast;
mod pattern;
pub mod pca;

pub use pca::{Code128, PcaConfig, PcaError, PcaModel};

use std::f64::consts::TAU;
use std::fmt;

use crate::features::DescriptorSet;
use crate::imaging::{self, Raster};
use fast::Plane;

pub const DEFAULT_MAX_FEATURES: usize = 200;

/// Pixels kept clear of every border at every pyramid level: the steered test
/// pattern reaches at most `round(13 * sqrt 2) = 18` pixels from the centre.
const EDGE: usize = 19;
const ORIENTATION_BINS: usize = 30;
/// Images smaller than this on either side yield no keypoints.
const MIN_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct OrbConfig {
    pub max_features: usize,
    pub fast_threshold: u8,
    pub scale_factor: f64,
    pub levels: usize,
    pub harris_k: f64,
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self {
            max_features: DEFAULT_MAX_FEATURES,
            fast_threshold: 20,
            scale_factor: 1.2,
            levels: 8,
            harris_k: 0.04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Position in full-resolution pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub response: f64,
    /// Radians in `[0, 2pi)`, image coordinates (y down).
    pub orientation: f64,
    pub scale_level: usize,
}

/// 256 packed test results; bit `i` lives in byte `i / 8`, LSB first.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor256(pub [u8; 32]);

impl BinaryDescriptor256 {
    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn hamming(&self, other: &Self) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

impl fmt::Debug for BinaryDescriptor256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryDescriptor256(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbFeature {
    pub keypoint: Keypoint,
    pub descriptor: BinaryDescriptor256,
}

struct Level {
    scale: f64,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Level {
    fn plane(&self) -> Plane<'_> {
        Plane {
            width: self.width,
            height: self.height,
            data: &self.pixels,
        }
    }
}

/// Test pattern rotated to each orientation bin.
#[derive(Clone)]
struct SteeredPattern {
    bins: Vec<[[i8; 4]; 256]>,
}

impl SteeredPattern {
    fn new() -> Self {
        let bins = (0..ORIENTATION_BINS)
            .map(|b| {
                let angle = b as f64 * TAU / ORIENTATION_BINS as f64;
                let (s, c) = angle.sin_cos();
                let rot = |x: i8, y: i8| {
                    let (x, y) = (x as f64, y as f64);
                    ((x * c - y * s).round() as i8, (x * s + y * c).round() as i8)
                };
                let mut out = [[0i8; 4]; 256];
                for (o, t) in out.iter_mut().zip(pattern::TEST_PAIRS.iter()) {
                    let (x0, y0) = rot(t[0], t[1]);
                    let (x1, y1) = rot(t[2], t[3]);
                    *o = [x0, y0, x1, y1];
                }
                out
            })
            .collect();
        Self { bins }
    }

    fn for_angle(&self, angle: f64) -> &[[i8; 4]; 256] {
        let step = TAU / ORIENTATION_BINS as f64;
        let bin = (angle / step).round() as usize % ORIENTATION_BINS;
        &self.bins[bin]
    }
}

/// ORB extractor with fixed parameters. Cheap to construct; reuse it to avoid
/// rebuilding the steered pattern tables.
#[derive(Clone)]
pub struct Orb {
    config: OrbConfig,
    pattern: SteeredPattern,
}

impl std::fmt::Debug for Orb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orb")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Default for Orb {
    fn default() -> Self {
        Self::new(OrbConfig::default())
    }
}

impl Orb {
    pub fn new(config: OrbConfig) -> Self {
        Self {
            config,
            pattern: SteeredPattern::new(),
        }
    }

    pub fn config(&self) -> &OrbConfig {
        &self.config
    }

    fn pyramid(&self, r: &Raster) -> Vec<Level> {
        let gray = imaging::to_grayscale(r);
        let (w0, h0) = (gray.width(), gray.height());
        let mut levels = Vec::with_capacity(self.config.levels);
        if w0 < MIN_SIDE || h0 < MIN_SIDE {
            return levels;
        }
        let mut current = gray;
        for i in 0..self.config.levels {
            let scale = self.config.scale_factor.powi(i as i32);
            if i > 0 {
                let w = (w0 as f64 / scale).round() as usize;
                let h = (h0 as f64 / scale).round() as usize;
                if w <= 2 * EDGE || h <= 2 * EDGE {
                    break;
                }
                current = imaging::resize_bilinear(&current, w, h).expect("non-zero size");
            }
            levels.push(Level {
                scale,
                width: current.width(),
                height: current.height(),
                pixels: current.pixels().to_vec(),
            });
        }
        levels
    }

    /// Keypoint budget per level, geometric in the scale factor.
    fn level_quotas(&self, n_levels: usize, total: usize) -> Vec<usize> {
        if n_levels == 0 {
            return Vec::new();
        }
        let factor = 1.0 / self.config.scale_factor;
        let mut desired = total as f64 * (1.0 - factor) / (1.0 - factor.powi(n_levels as i32));
        let mut quotas = Vec::with_capacity(n_levels);
        let mut assigned = 0usize;
        for _ in 0..n_levels - 1 {
            let q = (desired.round() as usize).min(total - assigned);
            quotas.push(q);
            assigned += q;
            desired *= factor;
        }
        quotas.push(total - assigned);
        quotas
    }

    fn detect_in(&self, levels: &[Level], max_n: usize) -> Vec<Keypoint> {
        let quotas = self.level_quotas(levels.len(), max_n);
        let mut carry = 0usize;
        let mut out = Vec::new();
        for (li, (level, quota)) in levels.iter().zip(quotas).enumerate() {
            let plane = level.plane();
            let mut found: Vec<(f64, usize, usize)> =
                fast::detect_fast(&plane, self.config.fast_threshold, EDGE)
                    .into_iter()
                    .map(|(x, y)| {
                        (
                            fast::harris_response(&plane, x, y, self.config.harris_k),
                            x,
                            y,
                        )
                    })
                    .collect();
            // Strongest first; raster order breaks ties.
            found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
            let budget = quota + carry;
            let take = found.len().min(budget);
            carry = budget - take;
            for &(response, x, y) in &found[..take] {
                out.push(Keypoint {
                    x: x as f64 * level.scale,
                    y: y as f64 * level.scale,
                    response,
                    orientation: fast::centroid_orientation(&plane, x, y),
                    scale_level: li,
                });
            }
        }
        out
    }

    /// Up to `max_n` oriented keypoints over the scale pyramid.
    pub fn detect(&self, r: &Raster, max_n: usize) -> Vec<Keypoint> {
        self.detect_in(&self.pyramid(r), max_n)
    }

    fn describe_in(&self, levels: &[Level], kps: &[Keypoint]) -> Vec<OrbFeature> {
        let smoothed: Vec<Vec<u8>> = levels
            .iter()
            .map(|l| fast::gaussian_blur(&l.plane()))
            .collect();
        let mut out = Vec::with_capacity(kps.len());
        for kp in kps {
            let Some(level) = levels.get(kp.scale_level) else {
                continue;
            };
            let lx = (kp.x / level.scale).round();
            let ly = (kp.y / level.scale).round();
            if lx < EDGE as f64
                || ly < EDGE as f64
                || lx >= (level.width - EDGE) as f64
                || ly >= (level.height - EDGE) as f64
            {
                continue;
            }
            let (cx, cy) = (lx as isize, ly as isize);
            let img = &smoothed[kp.scale_level];
            let at = |dx: i8, dy: i8| {
                img[(cy + dy as isize) as usize * level.width + (cx + dx as isize) as usize]
            };
            let mut bits = [0u8; 32];
            for (i, t) in self.pattern.for_angle(kp.orientation).iter().enumerate() {
                if at(t[0], t[1]) < at(t[2], t[3]) {
                    bits[i / 8] |= 1 << (i % 8);
                }
            }
            out.push(OrbFeature {
                keypoint: *kp,
                descriptor: BinaryDescriptor256(bits),
            });
        }
        out
    }

    /// One descriptor per keypoint whose steered test patch fits inside its
    /// pyramid level; other keypoints are dropped.
    pub fn describe(&self, r: &Raster, kps: &[Keypoint]) -> Vec<OrbFeature> {
        self.describe_in(&self.pyramid(r), kps)
    }

    /// Detect and describe sharing one pyramid, capped at `config.max_features`.
    pub fn extract(&self, r: &Raster) -> Vec<OrbFeature> {
        let levels = self.pyramid(r);
        let kps = self.detect_in(&levels, self.config.max_features);
        self.describe_in(&levels, &kps)
    }
}

/// Detect with the default parameters.
pub fn detect_keypoints(r: &Raster, max_n: usize) -> Vec<Keypoint> {
    Orb::default().detect(r, max_n)
}

/// Describe with the default parameters.
pub fn describe(r: &Raster, kps: &[Keypoint]) -> Vec<OrbFeature> {
    Orb::default().describe(r, kps)
}

/// Raw 256-bit descriptors as a descriptor set.
pub fn raw_descriptor_set(features: &[OrbFeature]) -> DescriptorSet {
    let rows: Vec<[u8; 32]> = features.iter().map(|f| f.descriptor.0).collect();
    DescriptorSet::from_binary_rows(256, &rows)
}
