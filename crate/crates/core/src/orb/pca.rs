//! PCA projection of 256-bit descriptors down to 128 dimensions, binarised by
//! sign.
//!
//! Covariance is accumulated from integer bit counts, so the fitted model does
//! not depend on the order of the training sample.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::BinaryDescriptor256;
use crate::features::DescriptorSet;

pub const INPUT_DIM: usize = 256;
pub const OUTPUT_DIM: usize = 128;
pub const MIN_SAMPLE: usize = 256;
pub const DEFAULT_MAX_SAMPLES: usize = 2_000_000;

const MAGIC: &[u8; 4] = b"NDPC";
const VERSION: u16 = 1;
const FILE_LEN: usize = 4 + 2 + 8 * (INPUT_DIM + OUTPUT_DIM * INPUT_DIM);

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least {MIN_SAMPLE} descriptors to fit, got {0}")]
    InsufficientSample(usize),
    #[error("corrupt PCA model file: {0}")]
    CorruptModel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaConfig {
    /// Larger samples are subsampled (seeded) to this many descriptors.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            max_samples: DEFAULT_MAX_SAMPLES,
            seed: 0,
        }
    }
}

/// 128 packed sign bits, LSB first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Code128(pub [u8; 16]);

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `OUTPUT_DIM` orthonormal rows of length `INPUT_DIM`, row-major.
    projection: Vec<f64>,
    trained_on: u64,
}

impl PcaModel {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection_row(&self, j: usize) -> &[f64] {
        &self.projection[j * INPUT_DIM..(j + 1) * INPUT_DIM]
    }

    /// Descriptors in the fitting sample; 0 for models loaded from disk.
    pub fn trained_on(&self) -> u64 {
        self.trained_on
    }

    /// Centered projection onto the 128 principal directions.
    pub fn project(&self, d: &BinaryDescriptor256) -> [f64; OUTPUT_DIM] {
        let mut centered = [0.0f64; INPUT_DIM];
        for (i, c) in centered.iter_mut().enumerate() {
            *c = if d.bit(i) { 1.0 } else { 0.0 } - self.mean[i];
        }
        let mut out = [0.0f64; OUTPUT_DIM];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self
                .projection_row(j)
                .iter()
                .zip(&centered)
                .map(|(p, c)| p * c)
                .sum();
        }
        out
    }

    /// Bit `j` is set iff the `j`-th projection is strictly positive.
    pub fn encode(&self, d: &BinaryDescriptor256) -> Code128 {
        let mut bits = [0u8; 16];
        for (j, v) in self.project(d).iter().enumerate() {
            if *v > 0.0 {
                bits[j / 8] |= 1 << (j % 8);
            }
        }
        Code128(bits)
    }

    pub fn encode_float(&self, d: &BinaryDescriptor256) -> [f32; OUTPUT_DIM] {
        self.project(d).map(|v| v as f32)
    }

    pub fn encode_set(&self, descriptors: &[BinaryDescriptor256]) -> DescriptorSet {
        let rows: Vec<[u8; 16]> = descriptors.iter().map(|d| self.encode(d).0).collect();
        DescriptorSet::from_binary_rows(OUTPUT_DIM as u32, &rows)
    }

    pub fn encode_set_float(&self, descriptors: &[BinaryDescriptor256]) -> DescriptorSet {
        let rows: Vec<[f32; OUTPUT_DIM]> =
            descriptors.iter().map(|d| self.encode_float(d)).collect();
        DescriptorSet::from_real_rows(OUTPUT_DIM as u32, &rows)
    }

    /// `NDPC` file: magic, version u16, mean then projection as LE f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FILE_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in self.mean.iter().chain(&self.projection) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PcaError> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(PcaError::CorruptModel("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(PcaError::CorruptModel(format!(
                "unsupported version {version}"
            )));
        }
        if bytes.len() != FILE_LEN {
            return Err(PcaError::CorruptModel(format!(
                "expected {FILE_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[6..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PcaError::CorruptModel("non-finite value".into()));
        }
        let (mean, projection) = values.split_at(INPUT_DIM);
        Ok(Self {
            mean: mean.to_vec(),
            projection: projection.to_vec(),
            trained_on: 0,
        })
    }
}

/// Fit the projection on a descriptor sample.
pub fn fit_pca(
    descriptors: &[BinaryDescriptor256],
    config: &PcaConfig,
) -> Result<PcaModel, PcaError> {
    if descriptors.len() < MIN_SAMPLE {
        return Err(PcaError::InsufficientSample(descriptors.len()));
    }
    let sample: Vec<&BinaryDescriptor256> = if descriptors.len() > config.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut picked = index::sample(&mut rng, descriptors.len(), config.max_samples).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| &descriptors[i]).collect()
    } else {
        descriptors.iter().collect()
    };
    let n = sample.len();

    // Bit counts and pairwise co-occurrence counts (upper triangle).
    let mut ones = vec![0u64; INPUT_DIM];
    let mut both = vec![0u64; INPUT_DIM * INPUT_DIM];
    let mut set_bits = Vec::with_capacity(INPUT_DIM);
    for d in &sample {
        set_bits.clear();
        set_bits.extend((0..INPUT_DIM).filter(|&i| d.bit(i)));
        for (a, &i) in set_bits.iter().enumerate() {
            ones[i] += 1;
            let row = &mut both[i * INPUT_DIM..(i + 1) * INPUT_DIM];
            for &j in &set_bits[a..] {
                row[j] += 1;
            }
        }
    }

    let nf = n as f64;
    let mean: Vec<f64> = ones.iter().map(|&c| c as f64 / nf).collect();
    let mut cov = DMatrix::<f64>::zeros(INPUT_DIM, INPUT_DIM);
    for i in 0..INPUT_DIM {
        for j in i..INPUT_DIM {
            // E[xy] - E[x]E[y] with exact integer numerators.
            let num = both[i * INPUT_DIM + j] as f64 * nf - ones[i] as f64 * ones[j] as f64;
            let v = num / (nf * nf);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..INPUT_DIM).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(OUTPUT_DIM);
    for &k in order.iter().take(OUTPUT_DIM) {
        if top == 0.0 || eig.eigenvalues[k] <= tol {
            break;
        }
        rows.push(eig.eigenvectors.column(k).iter().copied().collect());
    }
    complete_basis(&mut rows);
    for row in &mut rows {
        fix_sign(row);
    }

    Ok(PcaModel {
        mean,
        projection: rows.concat(),
        trained_on: n as u64,
    })
}

/// Extend `rows` to `OUTPUT_DIM` orthonormal rows using the standard basis in
/// index order (Gram-Schmidt, two passes).
fn complete_basis(rows: &mut Vec<Vec<f64>>) {
    let mut e = 0;
    while rows.len() < OUTPUT_DIM && e < INPUT_DIM {
        let mut v = vec![0.0; INPUT_DIM];
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for r in rows.iter() {
                let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, a)| *x -= dot * a);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
}

/// Flip the row so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(row: &mut [f64]) {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        row.iter_mut().for_each(|v| *v = -*v);
    }
}
