//! wasm-bindgen bindings used by `www/index.html`.
//!
//! Images cross the boundary as RGBA byte buffers, the layout of a canvas
//! `ImageData`.

use nearmatch::imaging::Raster;
use nearmatch::orb::{self, OrbFeature};
use nearmatch::{manip, phash, synth};
use wasm_bindgen::prelude::*;

/// Descriptor distance below which two ORB features count as matching.
pub const MATCH_THRESHOLD: u32 = 64;

#[wasm_bindgen]
pub struct DemoImage {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl DemoImage {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Copies the pixels out; JS wraps them in an `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

impl From<Raster> for DemoImage {
    fn from(r: Raster) -> Self {
        DemoImage {
            width: r.width(),
            height: r.height(),
            rgba: r.to_rgba(),
        }
    }
}

fn raster(width: usize, height: usize, rgba: &[u8]) -> Result<Raster, JsError> {
    Raster::from_rgba(width, height, rgba).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn synthetic_image(seed: u64, width: usize, height: usize) -> DemoImage {
    synth::image(seed, width, height).into()
}

/// Ids accepted by [`manipulate`], catalog order.
#[wasm_bindgen]
pub fn manipulation_ids() -> Vec<String> {
    manip::catalog().iter().map(|s| s.id.to_string()).collect()
}

#[wasm_bindgen]
pub fn manipulate(
    width: usize,
    height: usize,
    rgba: &[u8],
    id: &str,
    seed: u64,
) -> Result<DemoImage, JsError> {
    let spec = manip::lookup(id, seed).map_err(|e| JsError::new(&e.to_string()))?;
    let out = manip::apply(&raster(width, height, rgba)?, &spec)
        .map_err(|e| JsError::new(&e.to_string()))?;
    Ok(out.into())
}

/// 16 lowercase hex digits.
#[wasm_bindgen]
pub fn phash_hex(width: usize, height: usize, rgba: &[u8]) -> Result<String, JsError> {
    Ok(format!(
        "{:016x}",
        phash::phash(&raster(width, height, rgba)?).0
    ))
}

/// Hamming distance between two hashes from [`phash_hex`].
#[wasm_bindgen]
pub fn phash_distance(a: &str, b: &str) -> Result<u32, JsError> {
    let parse = |s: &str| {
        u64::from_str_radix(s, 16)
            .map(phash::PerceptualHash)
            .map_err(|_| JsError::new(&format!("not a 64-bit hex hash: {s:?}")))
    };
    Ok(parse(a)?.distance(parse(b)?))
}

#[wasm_bindgen]
pub struct OrbComparison {
    query_features: usize,
    reference_features: usize,
    matches: usize,
    keypoints: Vec<f64>,
}

#[wasm_bindgen]
impl OrbComparison {
    #[wasm_bindgen(getter)]
    pub fn query_features(&self) -> usize {
        self.query_features
    }

    #[wasm_bindgen(getter)]
    pub fn reference_features(&self) -> usize {
        self.reference_features
    }

    #[wasm_bindgen(getter)]
    pub fn matches(&self) -> usize {
        self.matches
    }

    /// Flat `[x, y, matched]` triples for the query keypoints; `matched` is 0 or 1.
    pub fn keypoints(&self) -> Vec<f64> {
        self.keypoints.clone()
    }
}

/// Mutual nearest neighbours under Hamming distance, at most [`MATCH_THRESHOLD`] apart.
pub fn mutual_matches(a: &[OrbFeature], b: &[OrbFeature]) -> Vec<Option<usize>> {
    let nearest = |f: &OrbFeature, pool: &[OrbFeature]| {
        pool.iter()
            .enumerate()
            .map(|(j, g)| (f.descriptor.hamming(&g.descriptor), j))
            .min()
    };
    a.iter()
        .enumerate()
        .map(|(i, f)| {
            let (d, j) = nearest(f, b)?;
            let back = nearest(&b[j], a).map(|(_, i2)| i2);
            (d <= MATCH_THRESHOLD && back == Some(i)).then_some(j)
        })
        .collect()
}

/// ORB features of both images and their mutual matches.
#[wasm_bindgen]
pub fn compare_orb(
    query_width: usize,
    query_height: usize,
    query_rgba: &[u8],
    ref_width: usize,
    ref_height: usize,
    ref_rgba: &[u8],
) -> Result<OrbComparison, JsError> {
    let extractor = orb::Orb::new(orb::OrbConfig::default());
    let q = extractor.extract(&raster(query_width, query_height, query_rgba)?);
    let r = extractor.extract(&raster(ref_width, ref_height, ref_rgba)?);
    let matched = mutual_matches(&q, &r);
    let keypoints = q
        .iter()
        .zip(&matched)
        .flat_map(|(f, m)| [f.keypoint.x, f.keypoint.y, m.is_some() as u8 as f64])
        .collect();
    Ok(OrbComparison {
        query_features: q.len(),
        reference_features: r.len(),
        matches: matched.iter().flatten().count(),
        keypoints,
    })
}
