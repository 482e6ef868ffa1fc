//! Per-image feature bags shared by the index and the feature file format.

use std::fmt;

use serde::{Deserialize, Serialize};

/// What one feature vector looks like. Binary vectors pack bit `i` into byte
/// `i / 8` at bit position `i % 8` (LSB first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Binary { bits: u32 },
    Real { dim: u32 },
}

impl FeatureKind {
    pub const ORB_CODE: FeatureKind = FeatureKind::Binary { bits: 128 };
    pub const ORB_RAW: FeatureKind = FeatureKind::Binary { bits: 256 };
    pub const ORB_FLOAT: FeatureKind = FeatureKind::Real { dim: 128 };
    pub const EMBEDDING: FeatureKind = FeatureKind::Real { dim: 512 };

    /// Wire code shared by the feature and index files.
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Binary { .. } => 0,
            FeatureKind::Real { .. } => 1,
        }
    }

    pub fn from_code(code: u8, dim: u32) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Binary { bits: dim }),
            1 => Some(FeatureKind::Real { dim }),
            _ => None,
        }
    }

    pub fn dim(self) -> u32 {
        match self {
            FeatureKind::Binary { bits } => bits,
            FeatureKind::Real { dim } => dim,
        }
    }

    /// Encoded size of one feature in bytes.
    pub fn feature_bytes(self) -> usize {
        match self {
            FeatureKind::Binary { bits } => (bits as usize).div_ceil(8),
            FeatureKind::Real { dim } => dim as usize * 4,
        }
    }

    /// Kinds the flat index accepts.
    pub fn is_indexable(self) -> bool {
        matches!(
            self,
            FeatureKind::Binary { bits: 128 | 256 } | FeatureKind::Real { dim: 128 | 512 }
        )
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Binary { bits } => write!(f, "binary/{bits}"),
            FeatureKind::Real { dim } => write!(f, "real32/{dim}"),
        }
    }
}

/// All feature vectors of one image, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub enum DescriptorSet {
    Binary { bits: u32, data: Vec<u8> },
    Real { dim: u32, data: Vec<f32> },
}

impl DescriptorSet {
    pub fn empty(kind: FeatureKind) -> Self {
        match kind {
            FeatureKind::Binary { bits } => DescriptorSet::Binary {
                bits,
                data: Vec::new(),
            },
            FeatureKind::Real { dim } => DescriptorSet::Real {
                dim,
                data: Vec::new(),
            },
        }
    }

    /// Binary set from per-feature byte rows; every row must be `ceil(bits/8)` long.
    pub fn from_binary_rows<R: AsRef<[u8]>>(bits: u32, rows: &[R]) -> Self {
        let stride = (bits as usize).div_ceil(8);
        let mut data = Vec::with_capacity(rows.len() * stride);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), stride, "binary row length");
            data.extend_from_slice(row);
        }
        DescriptorSet::Binary { bits, data }
    }

    pub fn from_real_rows<R: AsRef<[f32]>>(dim: u32, rows: &[R]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * dim as usize);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), dim as usize, "real row length");
            data.extend_from_slice(row);
        }
        DescriptorSet::Real { dim, data }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            DescriptorSet::Binary { bits, .. } => FeatureKind::Binary { bits: *bits },
            DescriptorSet::Real { dim, .. } => FeatureKind::Real { dim: *dim },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DescriptorSet::Binary { bits, data } => {
                let stride = (*bits as usize).div_ceil(8);
                if stride == 0 {
                    0
                } else {
                    data.len() / stride
                }
            }
            DescriptorSet::Real { dim, data } => {
                if *dim == 0 {
                    0
                } else {
                    data.len() / *dim as usize
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes of binary feature `i`. Panics for real sets.
    pub fn binary_row(&self, i: usize) -> &[u8] {
        match self {
            DescriptorSet::Binary { bits, data } => {
                let stride = (*bits as usize).div_ceil(8);
                &data[i * stride..(i + 1) * stride]
            }
            DescriptorSet::Real { .. } => panic!("binary_row on a real descriptor set"),
        }
    }

    /// Values of real feature `i`. Panics for binary sets.
    pub fn real_row(&self, i: usize) -> &[f32] {
        match self {
            DescriptorSet::Real { dim, data } => {
                let d = *dim as usize;
                &data[i * d..(i + 1) * d]
            }
            DescriptorSet::Binary { .. } => panic!("real_row on a binary descriptor set"),
        }
    }

    /// Keep only the first `n` features.
    pub fn truncate(&mut self, n: usize) {
        match self {
            DescriptorSet::Binary { bits, data } => data.truncate(n * (*bits as usize).div_ceil(8)),
            DescriptorSet::Real { dim, data } => data.truncate(n * *dim as usize),
        }
    }
}
