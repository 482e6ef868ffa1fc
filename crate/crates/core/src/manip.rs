//! The fixed suite of 22 benchmark manipulations.
//!
//! Every manipulation is a deterministic function of the source raster and its
//! [`ManipulationSpec`]; the only randomness (Gaussian noise) comes from a
//! ChaCha generator seeded with the manipulation's `rng_seed`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::imaging::{self, Raster};

/// Manipulation id used for the unmodified source when it is itself a query.
pub const IDENTITY_ID: &str = "identity";

pub const CATALOG_SIZE: usize = 22;

const OVERLAY_TEXT: &str = "SAMPLE TEXT";
const MARKUP_RED: [u8; 3] = [255, 0, 0];
const MARKUP_STROKE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ManipError {
    #[error("{id} needs at least a 3x3 source, got {width}x{height}")]
    TooSmall {
        id: &'static str,
        width: usize,
        height: usize,
    },
    #[error("unknown manipulation id {0:?}")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CropRegion {
    /// `(w/2, h/2, w, h)`
    BottomRightQuarter,
    /// `(w/3, h/3, w, h)`
    BottomRightTwoThirds,
    /// `(0, 0, 2w/3, 2h/3)`
    TopLeftTwoThirds,
}

impl CropRegion {
    /// Half-open pixel region for a `w x h` source.
    pub fn bounds(self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        match self {
            CropRegion::BottomRightQuarter => (w / 2, h / 2, w, h),
            CropRegion::BottomRightTwoThirds => (w / 3, h / 3, w, h),
            CropRegion::TopLeftTwoThirds => (0, 0, 2 * w / 3, 2 * h / 3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Manipulation {
    /// Additive i.i.d. Gaussian noise, SD in 8-bit intensity units.
    GaussianNoise {
        sd: f64,
    },
    Crop {
        region: CropRegion,
    },
    FlipHorizontal,
    /// Positive is clockwise on screen.
    RotateClockwise {
        degrees: f64,
    },
    /// Scale both dimensions to `percent`% (floored, at least 1 px).
    Resize {
        percent: u32,
    },
    RgbToGbr,
    Grayscale,
    TextOverlay,
    MarkupRectangle,
    MarkupEllipse,
    MotionBlur {
        length: usize,
        angle_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManipulationSpec {
    pub id: &'static str,
    #[serde(flatten)]
    pub op: Manipulation,
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ManipulatedImage {
    pub source_id: String,
    pub spec: ManipulationSpec,
    pub raster: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skip {
    pub source_id: String,
    pub manip_id: &'static str,
    pub reason: String,
}

const ENTRIES: [(&str, Manipulation); CATALOG_SIZE] = [
    ("noise_sd2", Manipulation::GaussianNoise { sd: 2.0 }),
    ("noise_sd4", Manipulation::GaussianNoise { sd: 4.0 }),
    ("noise_sd8", Manipulation::GaussianNoise { sd: 8.0 }),
    (
        "crop_br_quarter",
        Manipulation::Crop {
            region: CropRegion::BottomRightQuarter,
        },
    ),
    (
        "crop_br_two_thirds",
        Manipulation::Crop {
            region: CropRegion::BottomRightTwoThirds,
        },
    ),
    (
        "crop_tl_two_thirds",
        Manipulation::Crop {
            region: CropRegion::TopLeftTwoThirds,
        },
    ),
    ("flip_h", Manipulation::FlipHorizontal),
    ("rot_cw5", Manipulation::RotateClockwise { degrees: 5.0 }),
    ("rot_cw10", Manipulation::RotateClockwise { degrees: 10.0 }),
    ("rot_ccw5", Manipulation::RotateClockwise { degrees: -5.0 }),
    (
        "rot_ccw10",
        Manipulation::RotateClockwise { degrees: -10.0 },
    ),
    ("resize_20", Manipulation::Resize { percent: 20 }),
    ("resize_40", Manipulation::Resize { percent: 40 }),
    ("resize_80", Manipulation::Resize { percent: 80 }),
    ("gbr", Manipulation::RgbToGbr),
    ("gray", Manipulation::Grayscale),
    ("text", Manipulation::TextOverlay),
    ("markup_rect", Manipulation::MarkupRectangle),
    ("markup_ellipse", Manipulation::MarkupEllipse),
    (
        "motion_10_15",
        Manipulation::MotionBlur {
            length: 10,
            angle_deg: 15.0,
        },
    ),
    (
        "motion_15_20",
        Manipulation::MotionBlur {
            length: 15,
            angle_deg: 20.0,
        },
    ),
    (
        "motion_20_25",
        Manipulation::MotionBlur {
            length: 20,
            angle_deg: 25.0,
        },
    ),
];

/// SplitMix64 step, used to derive independent per-entry seeds.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The catalog with noise seeds derived from seed 0.
pub fn catalog() -> Vec<ManipulationSpec> {
    catalog_with_seed(0)
}

pub fn catalog_with_seed(seed: u64) -> Vec<ManipulationSpec> {
    ENTRIES
        .iter()
        .enumerate()
        .map(|(i, &(id, op))| ManipulationSpec {
            id,
            op,
            rng_seed: mix_seed(seed, i as u64),
        })
        .collect()
}

pub fn lookup(id: &str, seed: u64) -> Result<ManipulationSpec, ManipError> {
    catalog_with_seed(seed)
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| ManipError::UnknownId(id.to_owned()))
}

/// Apply one manipulation. The result is always RGB.
pub fn apply(r: &Raster, spec: &ManipulationSpec) -> Result<Raster, ManipError> {
    let src = r.to_rgb();
    let (w, h) = (src.width(), src.height());
    let out = match spec.op {
        Manipulation::GaussianNoise { sd } => add_noise(&src, sd, spec.rng_seed),
        Manipulation::Crop { region } => {
            if w < 3 || h < 3 {
                return Err(ManipError::TooSmall {
                    id: spec.id,
                    width: w,
                    height: h,
                });
            }
            let (x0, y0, x1, y1) = region.bounds(w, h);
            imaging::crop(&src, x0, y0, x1, y1).expect("crop bounds are valid for w, h >= 3")
        }
        Manipulation::FlipHorizontal => imaging::flip_horizontal(&src),
        Manipulation::RotateClockwise { degrees } => imaging::rotate(&src, -degrees, [0, 0, 0]),
        Manipulation::Resize { percent } => {
            let nw = (w * percent as usize / 100).max(1);
            let nh = (h * percent as usize / 100).max(1);
            imaging::resize_bilinear(&src, nw, nh).expect("dimensions are at least 1")
        }
        Manipulation::RgbToGbr => imaging::rgb_to_gbr(&src),
        Manipulation::Grayscale => imaging::to_grayscale(&src).to_rgb(),
        Manipulation::TextOverlay => overlay_text(&src),
        Manipulation::MarkupRectangle => {
            let mut out = src.clone();
            let (ix, iy) = (w / 10, h / 10);
            imaging::draw_rect_outline(&mut out, ix, iy, w - ix, h - iy, MARKUP_STROKE, MARKUP_RED);
            out
        }
        Manipulation::MarkupEllipse => {
            let mut out = src.clone();
            let (wf, hf) = (w as f64, h as f64);
            imaging::draw_ellipse_outline(
                &mut out,
                wf / 2.0,
                hf / 2.0,
                wf / 4.0,
                hf / 4.0,
                MARKUP_STROKE as f64,
                MARKUP_RED,
            );
            out
        }
        Manipulation::MotionBlur { length, angle_deg } => {
            imaging::convolve(&src, &imaging::motion_kernel(length, angle_deg))
        }
    };
    Ok(out)
}

fn add_noise(r: &Raster, sd: f64, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sd).expect("sd is finite and non-negative");
    let pixels = r
        .pixels()
        .iter()
        .map(|&v| {
            (v as f64 + normal.sample(&mut rng))
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    Raster::new(r.width(), r.height(), r.channels(), pixels).expect("same shape as input")
}

/// White text with a black outline, centred in the bottom 15% of the image.
fn overlay_text(r: &Raster) -> Raster {
    let mut out = r.clone();
    let (w, h) = (r.width(), r.height());
    let glyph_h = (h / 10).max(12);
    let tw = imaging::text_width(OVERLAY_TEXT, glyph_h);
    let band_centre = h as f64 - 0.075 * h as f64;
    let rendered_h = glyph_h.div_ceil(7) * 7;
    let x = (w as isize - tw as isize) / 2;
    let y = (band_centre - rendered_h as f64 / 2.0).round() as isize;
    imaging::draw_text(
        &mut out,
        OVERLAY_TEXT,
        x,
        y,
        glyph_h,
        [255, 255, 255],
        [0, 0, 0],
    );
    out
}

pub fn apply_manipulated(
    r: &Raster,
    source_id: &str,
    spec: &ManipulationSpec,
) -> Result<ManipulatedImage, ManipError> {
    Ok(ManipulatedImage {
        source_id: source_id.to_owned(),
        spec: spec.clone(),
        raster: apply(r, spec)?,
    })
}

/// Apply the whole catalog; inapplicable entries become skips, so
/// `outputs + skips == 22`.
pub fn generate_all(r: &Raster, source_id: &str, seed: u64) -> (Vec<ManipulatedImage>, Vec<Skip>) {
    let mut outputs = Vec::with_capacity(CATALOG_SIZE);
    let mut skips = Vec::new();
    for spec in catalog_with_seed(seed) {
        match apply_manipulated(r, source_id, &spec) {
            Ok(m) => outputs.push(m),
            Err(e) => skips.push(Skip {
                source_id: source_id.to_owned(),
                manip_id: spec.id,
                reason: e.to_string(),
            }),
        }
    }
    (outputs, skips)
}
