//! Exact flat nearest-neighbour index over every feature of every image.
//!
//! Two retrieval modes sit on top of the exhaustive k-NN scan:
//!
//! * **vote count** – each query feature's `k` nearest stored features vote for
//!   their owning image; images rank by votes, then by the summed distance of
//!   the votes, then by insertion order.
//! * **distance** – for indexes holding exactly one vector per image, images
//!   rank by squared Euclidean distance to the single query vector.
//!
//! Distances are squared Euclidean throughout. For binary features the bits
//! are 0/1 coordinates, so the squared distance is the Hamming distance and is
//! computed with popcounts.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, Reader, Truncated};
use crate::features::{DescriptorSet, FeatureKind};

const MAGIC: &[u8; 4] = b"NDIX";
const VERSION: u16 = 1;

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_N: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("feature kind mismatch: index holds {expected}, got {found}")]
    KindMismatch {
        expected: FeatureKind,
        found: FeatureKind,
    },
    #[error("feature kind {0} cannot be indexed")]
    UnsupportedKind(FeatureKind),
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("query has no features")]
    EmptyQuery,
    #[error("distance ranking needs one feature per image; {image_id:?} has {count}")]
    MultiFeatureIndex { image_id: String, count: usize },
    #[error("invalid query parameters: k and n must be at least 1")]
    InvalidParams,
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
}

impl From<Truncated> for IndexError {
    fn from(t: Truncated) -> Self {
        IndexError::CorruptIndex(format!("truncated while reading {}", t.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    VoteCount,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryParams {
    /// Neighbours fetched per query feature.
    pub k: usize,
    /// Images returned.
    pub n: usize,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            n: DEFAULT_N,
        }
    }
}

impl QueryParams {
    fn validate(&self) -> Result<(), IndexError> {
        if self.k == 0 || self.n == 0 {
            return Err(IndexError::InvalidParams);
        }
        Ok(())
    }
}

/// One stored feature, identified by its global insertion index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub feature: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedImage {
    pub rank: usize,
    pub image_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub mode: RetrievalMode,
    pub results: Vec<RankedImage>,
}

impl RetrievalResult {
    /// 1-based rank of `image_id`, if retrieved.
    pub fn rank_of(&self, image_id: &str) -> Option<usize> {
        self.results
            .iter()
            .find(|r| r.image_id == image_id)
            .map(|r| r.rank)
    }
}

/// A single query vector borrowed from a descriptor set.
#[derive(Debug, Clone, Copy)]
pub enum FeatureRef<'a> {
    Binary { bits: u32, bytes: &'a [u8] },
    Real(&'a [f32]),
}

impl FeatureRef<'_> {
    fn kind(&self) -> FeatureKind {
        match self {
            FeatureRef::Binary { bits, .. } => FeatureKind::Binary { bits: *bits },
            FeatureRef::Real(v) => FeatureKind::Real {
                dim: v.len() as u32,
            },
        }
    }
}

impl DescriptorSet {
    pub fn feature(&self, i: usize) -> FeatureRef<'_> {
        match self {
            DescriptorSet::Binary { bits, .. } => FeatureRef::Binary {
                bits: *bits,
                bytes: self.binary_row(i),
            },
            DescriptorSet::Real { .. } => FeatureRef::Real(self.real_row(i)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageEntry {
    pub id: String,
    pub first_feature: usize,
    pub feature_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Store {
    /// Each feature is `words` little-endian `u64`s.
    Binary {
        words: usize,
        data: Vec<u64>,
    },
    Real {
        dim: usize,
        data: Vec<f32>,
    },
}

fn pack_words(bytes: &[u8], words: usize) -> impl Iterator<Item = u64> + '_ {
    (0..words).map(move |w| {
        let mut buf = [0u8; 8];
        let start = w * 8;
        let end = (start + 8).min(bytes.len());
        if start < end {
            buf[..end - start].copy_from_slice(&bytes[start..end]);
        }
        u64::from_le_bytes(buf)
    })
}

/// Total order on (distance, insertion index) used for every ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    distance: f64,
    feature: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.feature.cmp(&other.feature))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded max-heap keeping the `k` smallest candidates seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Worst kept distance once full; candidates must beat it strictly since
    /// they arrive in increasing insertion order.
    #[inline]
    fn bound(&self) -> Option<f64> {
        (self.heap.len() == self.k)
            .then(|| self.heap.peek().map(|c| c.distance))
            .flatten()
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                feature: c.feature,
                distance: c.distance,
            })
            .collect()
    }
}

#[inline]
fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Squared Euclidean distance accumulated in `f64`, in coordinate order.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    kind: FeatureKind,
    store: Store,
    owner: Vec<u32>,
    images: Vec<ImageEntry>,
    by_id: HashMap<String, usize>,
}

impl FlatIndex {
    /// Build from images in insertion order; that order is the final tie-break.
    pub fn build<S: AsRef<str>>(
        images: &[(S, DescriptorSet)],
        kind: FeatureKind,
    ) -> Result<Self, IndexError> {
        if !kind.is_indexable() {
            return Err(IndexError::UnsupportedKind(kind));
        }
        let total: usize = images.iter().map(|(_, s)| s.len()).sum();
        let mut store = match kind {
            FeatureKind::Binary { bits } => Store::Binary {
                words: (bits as usize).div_ceil(64),
                data: Vec::with_capacity(total * (bits as usize).div_ceil(64)),
            },
            FeatureKind::Real { dim } => Store::Real {
                dim: dim as usize,
                data: Vec::with_capacity(total * dim as usize),
            },
        };
        let mut owner = Vec::with_capacity(total);
        let mut entries = Vec::with_capacity(images.len());
        let mut by_id = HashMap::with_capacity(images.len());
        for (slot, (id, set)) in images.iter().enumerate() {
            let id = id.as_ref();
            if set.kind() != kind {
                return Err(IndexError::KindMismatch {
                    expected: kind,
                    found: set.kind(),
                });
            }
            if by_id.insert(id.to_owned(), slot).is_some() {
                return Err(IndexError::DuplicateImageId(id.to_owned()));
            }
            let count = set.len();
            if count == 0 {
                log::warn!("image {id:?} has no features and will never be retrieved");
            }
            match (&mut store, set) {
                (Store::Binary { words, data }, DescriptorSet::Binary { data: src, bits }) => {
                    let stride = (*bits as usize).div_ceil(8);
                    for row in src.chunks_exact(stride) {
                        data.extend(pack_words(row, *words));
                    }
                }
                (Store::Real { data, .. }, DescriptorSet::Real { data: src, .. }) => {
                    data.extend_from_slice(src);
                }
                _ => unreachable!("kind checked above"),
            }
            entries.push(ImageEntry {
                id: id.to_owned(),
                first_feature: owner.len(),
                feature_count: count,
            });
            owner.extend(std::iter::repeat_n(slot as u32, count));
        }
        Ok(Self {
            kind,
            store,
            owner,
            images: entries,
            by_id,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn feature_count(&self) -> usize {
        self.owner.len()
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.by_id.contains_key(image_id)
    }

    /// Image slot owning global feature `feature`.
    pub fn owner_of(&self, feature: usize) -> &ImageEntry {
        &self.images[self.owner[feature] as usize]
    }

    /// Exact `k` nearest stored features, ascending by distance then insertion
    /// index.
    pub fn knn_features(&self, q: FeatureRef<'_>, k: usize) -> Result<Vec<Neighbor>, IndexError> {
        if q.kind() != self.kind {
            return Err(IndexError::KindMismatch {
                expected: self.kind,
                found: q.kind(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut top = TopK::new(k);
        match (&self.store, q) {
            (Store::Binary { words, data }, FeatureRef::Binary { bytes, .. }) => {
                let query: Vec<u64> = pack_words(bytes, *words).collect();
                let mut bound = u32::MAX;
                for (i, stored) in data.chunks_exact(*words).enumerate() {
                    let d = hamming_words(&query, stored);
                    if d < bound || top.heap.len() < k {
                        top.push(Candidate {
                            distance: d as f64,
                            feature: i,
                        });
                        if let Some(b) = top.bound() {
                            bound = b as u32;
                        }
                    }
                }
            }
            (Store::Real { dim, data }, FeatureRef::Real(query)) => {
                for (i, stored) in data.chunks_exact(*dim).enumerate() {
                    let d = squared_l2(query, stored);
                    if top.bound().is_none_or(|b| d < b) {
                        top.push(Candidate {
                            distance: d,
                            feature: i,
                        });
                    }
                }
            }
            _ => unreachable!("kind checked above"),
        }
        Ok(top.into_sorted())
    }

    fn neighbours_per_feature(
        &self,
        qset: &DescriptorSet,
        k: usize,
    ) -> Result<Vec<Vec<Neighbor>>, IndexError> {
        let n = qset.len();
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n)
                .into_par_iter()
                .map(|i| self.knn_features(qset.feature(i), k))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n)
                .map(|i| self.knn_features(qset.feature(i), k))
                .collect()
        }
    }

    /// Vote-count retrieval: every (query feature, stored feature) pair in the
    /// query feature's k-NN list is one vote for the stored feature's image.
    pub fn query_votes(
        &self,
        qset: &DescriptorSet,
        p: QueryParams,
    ) -> Result<RetrievalResult, IndexError> {
        p.validate()?;
        if qset.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        if qset.kind() != self.kind {
            return Err(IndexError::KindMismatch {
                expected: self.kind,
                found: qset.kind(),
            });
        }
        let mut votes = vec![0u64; self.images.len()];
        let mut dist_sum = vec![0.0f64; self.images.len()];
        // Merge in query-feature order so float sums are reproducible.
        for neighbours in self.neighbours_per_feature(qset, p.k)? {
            for nb in neighbours {
                let slot = self.owner[nb.feature] as usize;
                votes[slot] += 1;
                dist_sum[slot] += nb.distance;
            }
        }
        let mut ranked: Vec<usize> = (0..self.images.len()).filter(|&s| votes[s] > 0).collect();
        ranked.sort_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(dist_sum[a].total_cmp(&dist_sum[b]))
                .then(a.cmp(&b))
        });
        ranked.truncate(p.n);
        Ok(RetrievalResult {
            mode: RetrievalMode::VoteCount,
            results: ranked
                .into_iter()
                .enumerate()
                .map(|(i, s)| RankedImage {
                    rank: i + 1,
                    image_id: self.images[s].id.clone(),
                    score: votes[s] as f64,
                })
                .collect(),
        })
    }

    /// Distance retrieval for single-vector-per-image indexes.
    pub fn query_distance(&self, q: &[f32], p: QueryParams) -> Result<RetrievalResult, IndexError> {
        p.validate()?;
        if let Some(bad) = self.images.iter().find(|e| e.feature_count != 1) {
            return Err(IndexError::MultiFeatureIndex {
                image_id: bad.id.clone(),
                count: bad.feature_count,
            });
        }
        // One feature per image, so feature order is image insertion order.
        let neighbours = self.knn_features(FeatureRef::Real(q), p.n)?;
        Ok(RetrievalResult {
            mode: RetrievalMode::Distance,
            results: neighbours
                .into_iter()
                .enumerate()
                .map(|(i, nb)| RankedImage {
                    rank: i + 1,
                    image_id: self.owner_of(nb.feature).id.clone(),
                    score: nb.distance,
                })
                .collect(),
        })
    }

    /// `NDIX` file: header, image table, packed features, trailing CRC32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&self.kind.dim().to_le_bytes());
        out.extend_from_slice(&(self.images.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.owner.len() as u64).to_le_bytes());
        for e in &self.images {
            out.extend_from_slice(&(e.id.len() as u16).to_le_bytes());
            out.extend_from_slice(e.id.as_bytes());
            out.extend_from_slice(&(e.feature_count as u32).to_le_bytes());
        }
        match &self.store {
            Store::Binary { words, data } => {
                let stride = self.kind.feature_bytes();
                for feature in data.chunks_exact(*words) {
                    let bytes: Vec<u8> = feature.iter().flat_map(|w| w.to_le_bytes()).collect();
                    out.extend_from_slice(&bytes[..stride]);
                }
            }
            Store::Real { data, .. } => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        codec::push_crc(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |m: String| IndexError::CorruptIndex(m);
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(corrupt(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let body = codec::split_crc(bytes).map_err(corrupt)?;
        let mut r = Reader::new(&body[6..]);
        let code = r.u8("kind")?;
        let dim = r.u32("dim")?;
        let kind = FeatureKind::from_code(code, dim)
            .ok_or_else(|| corrupt(format!("unknown kind code {code}")))?;
        if !kind.is_indexable() {
            return Err(corrupt(format!("unsupported feature kind {kind}")));
        }
        let n_images = r.u64("image count")?;
        let n_features = r.u64("feature count")?;
        // Each table row takes at least 6 bytes and each feature at least one.
        if n_images > (r.remaining() / 6) as u64 || n_features > r.remaining() as u64 {
            return Err(corrupt("declared counts exceed file size".into()));
        }
        let mut table = Vec::with_capacity(n_images as usize);
        let mut declared = 0u64;
        for _ in 0..n_images {
            let len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(len, "image id")?)
                .map_err(|_| corrupt("image id is not UTF-8".into()))?
                .to_owned();
            let count = r.u32("feature count")? as usize;
            declared += count as u64;
            table.push((id, count));
        }
        if declared != n_features {
            return Err(corrupt(format!(
                "image table sums to {declared} features, header says {n_features}"
            )));
        }
        let stride = kind.feature_bytes();
        let payload_len = (n_features as usize)
            .checked_mul(stride)
            .ok_or_else(|| corrupt("feature payload overflows".into()))?;
        if r.remaining() != payload_len {
            return Err(corrupt(format!(
                "feature payload is {} bytes, expected {payload_len}",
                r.remaining()
            )));
        }
        let mut images = Vec::with_capacity(table.len());
        for (id, count) in table {
            let raw = r.take(count * stride, "features")?;
            let set = match kind {
                FeatureKind::Binary { bits } => DescriptorSet::Binary {
                    bits,
                    data: raw.to_vec(),
                },
                FeatureKind::Real { dim } => DescriptorSet::Real {
                    dim,
                    data: raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                },
            };
            images.push((id, set));
        }
        Self::build(&images, kind).map_err(|e| match e {
            IndexError::DuplicateImageId(id) => corrupt(format!("duplicate image id {id:?}")),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bin_set(rows: &[u128]) -> DescriptorSet {
        let rows: Vec<[u8; 16]> = rows.iter().map(|r| r.to_le_bytes()).collect();
        DescriptorSet::from_binary_rows(128, &rows)
    }

    #[test]
    fn empty_index_returns_nothing() {
        let ix = FlatIndex::build::<&str>(&[], FeatureKind::ORB_CODE).unwrap();
        let q = bin_set(&[7]);
        assert!(ix.knn_features(q.feature(0), 5).unwrap().is_empty());
        assert!(ix
            .query_votes(&q, QueryParams::default())
            .unwrap()
            .results
            .is_empty());
    }

    #[test]
    fn owners_follow_insertion() {
        let ix = FlatIndex::build(
            &[
                ("a", bin_set(&[1, 2])),
                ("b", bin_set(&[3, 4])),
                ("c", bin_set(&[5, 6])),
            ],
            FeatureKind::ORB_CODE,
        )
        .unwrap();
        assert_eq!(ix.feature_count(), 6);
        let owners: Vec<&str> = (0..6).map(|f| ix.owner_of(f).id.as_str()).collect();
        assert_eq!(owners, ["a", "a", "b", "b", "c", "c"]);
    }

    #[test]
    fn build_errors() {
        assert_eq!(
            FlatIndex::build(
                &[("a", bin_set(&[1])), ("a", bin_set(&[2]))],
                FeatureKind::ORB_CODE
            ),
            Err(IndexError::DuplicateImageId("a".into()))
        );
        assert!(matches!(
            FlatIndex::build(&[("a", bin_set(&[1]))], FeatureKind::ORB_RAW),
            Err(IndexError::KindMismatch { .. })
        ));
        assert!(matches!(
            FlatIndex::build::<&str>(&[], FeatureKind::Real { dim: 3 }),
            Err(IndexError::UnsupportedKind(_))
        ));
    }

    #[test]
    fn self_match_first_and_hamming_distance() {
        let ix =
            FlatIndex::build(&[("a", bin_set(&[0b1100, 0b1010]))], FeatureKind::ORB_CODE).unwrap();
        let q = bin_set(&[0b1010]);
        let nn = ix.knn_features(q.feature(0), 2).unwrap();
        assert_eq!(
            nn[0],
            Neighbor {
                feature: 1,
                distance: 0.0
            }
        );
        assert_eq!(
            nn[1],
            Neighbor {
                feature: 0,
                distance: 2.0
            }
        );
    }

    #[test]
    fn knn_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<u128> = (0..50).map(|_| rng.random::<u128>() & 0xFFFF).collect();
        let ix = FlatIndex::build(&[("x", bin_set(&rows))], FeatureKind::ORB_CODE).unwrap();
        let q = rng.random::<u128>() & 0xFFFF;
        let mut oracle: Vec<(u32, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r ^ q).count_ones(), i))
            .collect();
        oracle.sort();
        let got = ix.knn_features(bin_set(&[q]).feature(0), 5).unwrap();
        let got: Vec<(u32, usize)> = got.iter().map(|n| (n.distance as u32, n.feature)).collect();
        assert_eq!(got, oracle[..5]);
    }

    #[test]
    fn votes_rank_by_shared_features() {
        // Query has 5 features; A holds 3 of them exactly, B holds 1.
        let q = bin_set(&[1 << 0, 1 << 20, 1 << 40, 1 << 60, 1 << 80]);
        let ix = FlatIndex::build(
            &[
                ("B", bin_set(&[1 << 60, u128::MAX, u128::MAX - 1])),
                ("A", bin_set(&[1 << 0, 1 << 20, 1 << 40])),
            ],
            FeatureKind::ORB_CODE,
        )
        .unwrap();
        let res = ix.query_votes(&q, QueryParams { k: 1, n: 10 }).unwrap();
        // Hand count with k = 1: features 0,20,40 -> A (exact). 60 -> B
        // (exact). 80 -> nearest is any single-bit code at distance 2; the
        // earliest such feature is B's 1<<60, so B gets a second vote but with
        // a larger distance sum.
        assert_eq!(res.results[0].image_id, "A");
        assert_eq!(res.results[0].score, 3.0);
        assert_eq!(res.results[1].image_id, "B");
        assert_eq!(res.results[1].score, 2.0);
    }

    #[test]
    fn self_query_saturates_votes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sets: Vec<(String, DescriptorSet)> = (0..20)
            .map(|i| {
                (
                    format!("img{i}"),
                    bin_set(&(0..8).map(|_| rng.random()).collect::<Vec<_>>()),
                )
            })
            .collect();
        let ix = FlatIndex::build(&sets, FeatureKind::ORB_CODE).unwrap();
        let res = ix
            .query_votes(&sets[7].1, QueryParams { k: 1, n: 100 })
            .unwrap();
        assert_eq!(res.results[0].image_id, "img7");
        assert_eq!(res.results[0].score, 8.0);
    }

    #[test]
    fn distance_mode() {
        let e = |v: [f32; 3]| {
            let mut x = vec![0.0f32; 512];
            x[..3].copy_from_slice(&v);
            x
        };
        let ix = FlatIndex::build(
            &[
                (
                    "far",
                    DescriptorSet::from_real_rows(512, &[e([0.0, 1.0, 0.0])]),
                ),
                (
                    "near",
                    DescriptorSet::from_real_rows(512, &[e([0.8, 0.6, 0.0])]),
                ),
                (
                    "same",
                    DescriptorSet::from_real_rows(512, &[e([1.0, 0.0, 0.0])]),
                ),
            ],
            FeatureKind::EMBEDDING,
        )
        .unwrap();
        let res = ix
            .query_distance(&e([1.0, 0.0, 0.0]), QueryParams::default())
            .unwrap();
        let ids: Vec<&str> = res.results.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ["same", "near", "far"]);
        assert_eq!(res.results[0].score, 0.0);
        // (1-0.8)^2 + 0.6^2 = 0.4 in f32-rounded inputs.
        let want = (1.0f64 - 0.8f32 as f64).powi(2) + (0.6f32 as f64).powi(2);
        assert_eq!(res.results[1].score, want);
        assert_eq!(res.results[2].score, 2.0);
    }

    #[test]
    fn distance_mode_rejects_multi_feature_images() {
        let v = vec![0.0f32; 512];
        let ix = FlatIndex::build(
            &[(
                "two",
                DescriptorSet::from_real_rows(512, &[v.clone(), v.clone()]),
            )],
            FeatureKind::EMBEDDING,
        )
        .unwrap();
        assert!(matches!(
            ix.query_distance(&v, QueryParams::default()),
            Err(IndexError::MultiFeatureIndex { count: 2, .. })
        ));
    }

    #[test]
    fn empty_query_and_params() {
        let ix = FlatIndex::build(&[("a", bin_set(&[1]))], FeatureKind::ORB_CODE).unwrap();
        assert_eq!(
            ix.query_votes(
                &DescriptorSet::empty(FeatureKind::ORB_CODE),
                QueryParams::default()
            ),
            Err(IndexError::EmptyQuery)
        );
        assert_eq!(
            ix.query_votes(&bin_set(&[1]), QueryParams { k: 0, n: 1 }),
            Err(IndexError::InvalidParams)
        );
    }

    #[test]
    fn larger_n_extends_without_reordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sets: Vec<(String, DescriptorSet)> = (0..30)
            .map(|i| {
                (
                    format!("i{i}"),
                    bin_set(&(0..5).map(|_| rng.random()).collect::<Vec<_>>()),
                )
            })
            .collect();
        let ix = FlatIndex::build(&sets, FeatureKind::ORB_CODE).unwrap();
        let q = bin_set(&(0..6).map(|_| rng.random()).collect::<Vec<_>>());
        let short = ix.query_votes(&q, QueryParams { k: 10, n: 5 }).unwrap();
        let long = ix.query_votes(&q, QueryParams { k: 10, n: 20 }).unwrap();
        assert_eq!(short.results[..], long.results[..short.results.len()]);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = [0u8; 64];
        rng.fill_bytes(&mut b);
        let ix = FlatIndex::build(
            &[
                ("a", bin_set(&[1, 2, 3])),
                ("empty", bin_set(&[])),
                ("b", bin_set(&[9])),
            ],
            FeatureKind::ORB_CODE,
        )
        .unwrap();
        let bytes = ix.to_bytes();
        let back = FlatIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, ix);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(
            FlatIndex::from_bytes(&bytes[..bytes.len() - 1]),
            Err(IndexError::CorruptIndex(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        match FlatIndex::from_bytes(&v2) {
            Err(IndexError::CorruptIndex(m)) => assert!(m.contains("version 2")),
            other => panic!("{other:?}"),
        }
    }
}
