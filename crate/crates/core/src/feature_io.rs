//! On-disk interchange: the `NDF1` feature file and the JSON Lines manifests.
//!
//! Feature file layout (all integers little-endian):
//!
//! ```text
//! "NDF1" | version u16 = 1 | kind u8 (0 binary, 1 real32) | dim u32 | image count u64
//! per image: id length u16 | UTF-8 id | feature count u32 | payload
//! CRC32 of everything above
//! ```
//!
//! A binary feature takes `ceil(dim / 8)` bytes with bit 0 in the LSB of byte
//! 0; a real feature is `dim` IEEE-754 `f32` values.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, Reader, Truncated};
use crate::features::{DescriptorSet, FeatureKind};
use crate::index::RetrievalMode;
use crate::phash::PerceptualHash;

const MAGIC: &[u8; 4] = b"NDF1";
const VERSION: u16 = 1;
/// Largest dimension the reader accepts; far above any real descriptor.
const MAX_DIM: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum FeatureIoError {
    #[error("corrupt feature file: {0}")]
    CorruptFeatureFile(String),
    #[error("feature kind mismatch: file holds {expected}, image {id:?} has {found}")]
    KindMismatch {
        id: String,
        expected: FeatureKind,
        found: FeatureKind,
    },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image id is {0} bytes; the limit is 65535")]
    IdTooLong(usize),
    #[error("feature dimension must be between 1 and {MAX_DIM}, got {0}")]
    BadDimension(u32),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: no valid rows{}", path.display(), summarize(problems))]
    NoValidRows {
        path: PathBuf,
        problems: Vec<RowProblem>,
    },
}

fn summarize(problems: &[RowProblem]) -> String {
    match problems.first() {
        Some(p) => format!(" ({} rejected; first: {p})", problems.len()),
        None => String::new(),
    }
}

impl From<Truncated> for FeatureIoError {
    fn from(t: Truncated) -> Self {
        FeatureIoError::CorruptFeatureFile(format!("truncated while reading {}", t.0))
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureIoError + '_ {
    move |source| FeatureIoError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Decoded feature file: one descriptor set per image, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub kind: FeatureKind,
    pub images: Vec<(String, DescriptorSet)>,
}

impl FeatureFile {
    pub fn get(&self, id: &str) -> Option<&DescriptorSet> {
        self.images.iter().find(|(i, _)| i == id).map(|(_, s)| s)
    }

    pub fn feature_count(&self) -> usize {
        self.images.iter().map(|(_, s)| s.len()).sum()
    }

    pub fn read(path: &Path) -> Result<Self, FeatureIoError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        read_features(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<(), FeatureIoError> {
        let bytes = write_features(&self.images, self.kind)?;
        fs::write(path, bytes).map_err(io_err(path))
    }
}

pub fn write_features<S: AsRef<str>>(
    images: &[(S, DescriptorSet)],
    kind: FeatureKind,
) -> Result<Vec<u8>, FeatureIoError> {
    if kind.dim() == 0 || kind.dim() > MAX_DIM {
        return Err(FeatureIoError::BadDimension(kind.dim()));
    }
    let mut seen = HashSet::with_capacity(images.len());
    let payload: usize = images
        .iter()
        .map(|(id, s)| 6 + id.as_ref().len() + s.len() * kind.feature_bytes())
        .sum();
    let mut out = Vec::with_capacity(19 + payload + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind.code());
    out.extend_from_slice(&kind.dim().to_le_bytes());
    out.extend_from_slice(&(images.len() as u64).to_le_bytes());
    for (id, set) in images {
        let id = id.as_ref();
        if set.kind() != kind {
            return Err(FeatureIoError::KindMismatch {
                id: id.to_owned(),
                expected: kind,
                found: set.kind(),
            });
        }
        if !seen.insert(id) {
            return Err(FeatureIoError::DuplicateId(id.to_owned()));
        }
        let len = u16::try_from(id.len()).map_err(|_| FeatureIoError::IdTooLong(id.len()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&(set.len() as u32).to_le_bytes());
        match set {
            DescriptorSet::Binary { data, .. } => out.extend_from_slice(data),
            DescriptorSet::Real { data, .. } => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    codec::push_crc(&mut out);
    Ok(out)
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureFile, FeatureIoError> {
    let corrupt = FeatureIoError::CorruptFeatureFile;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    if bytes.len() < 6 {
        return Err(corrupt("truncated while reading version".into()));
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
    if dim == 0 || dim > MAX_DIM {
        return Err(corrupt(format!("dimension {dim} out of range")));
    }
    let stride = kind.feature_bytes();
    let count = r.u64("image count")?;
    // Every image record needs at least 6 bytes.
    if count > (r.remaining() / 6) as u64 {
        return Err(corrupt(format!("image count {count} exceeds file size")));
    }
    let mut images = Vec::with_capacity(count as usize);
    let mut seen = HashSet::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16("id length")? as usize;
        let id = std::str::from_utf8(r.take(len, "image id")?)
            .map_err(|_| corrupt("image id is not UTF-8".into()))?
            .to_owned();
        if !seen.insert(id.clone()) {
            return Err(corrupt(format!("duplicate image id {id:?}")));
        }
        let n = r.u32("feature count")? as usize;
        let payload_len = n
            .checked_mul(stride)
            .filter(|&l| l <= r.remaining())
            .ok_or_else(|| corrupt(format!("feature count {n} for {id:?} exceeds file size")))?;
        let raw = r.take(payload_len, "features")?;
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
    if r.remaining() != 0 {
        return Err(corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(FeatureFile { kind, images })
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Reddit,
    #[serde(rename = "4chan")]
    FourChan,
    Twitter,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRow {
    pub id: String,
    pub path: String,
    pub platform: Platform,
    pub posted_at: DateTime<FixedOffset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

/// One manipulated query and the source it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_path: String,
    pub source_id: String,
    pub manip_id: String,
    #[serde(default)]
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl QueryRow {
    /// File stem of the query path, e.g. `cat__flip_h`.
    pub fn query_id(&self) -> String {
        let p = Path::new(&self.query_path);
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.query_path.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Match,
    NoMatch,
}

impl Label {
    pub fn is_match(self) -> bool {
        self == Label::Match
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPairRow {
    pub query_id: String,
    pub result_id: String,
    pub phash_dist: u32,
    pub retrieval_score: f64,
    pub mode: RetrievalMode,
    pub label: Label,
}

/// Output row of `classify`: the first-ranked result of one query, labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedRow {
    pub query_id: String,
    pub result_id: String,
    pub query_phash: PerceptualHashHex,
    pub result_phash: PerceptualHashHex,
    pub phash_dist: u32,
    pub retrieval_score: f64,
    pub mode: RetrievalMode,
    pub probability: f64,
    pub label: Label,
}

/// Hash serialized as 16 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PerceptualHashHex(pub PerceptualHash);

impl fmt::Debug for PerceptualHashHex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for PerceptualHashHex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for PerceptualHashHex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(serde::de::Error::custom("hash must be 16 hex characters"));
        }
        s.parse()
            .map(PerceptualHashHex)
            .map_err(serde::de::Error::custom)
    }
}

/// Rows with a natural key are checked for uniqueness; later duplicates are
/// rejected.
pub trait ManifestRow: DeserializeOwned {
    fn key(&self) -> Option<&str> {
        None
    }
}

impl ManifestRow for CorpusRow {
    fn key(&self) -> Option<&str> {
        Some(&self.id)
    }
}

impl ManifestRow for QueryRow {
    fn key(&self) -> Option<&str> {
        Some(&self.query_path)
    }
}

impl ManifestRow for LabeledPairRow {}
impl ManifestRow for ClassifiedRow {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowProblem {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct Manifest<T> {
    pub rows: Vec<T>,
    /// Rejected lines, in file order.
    pub problems: Vec<RowProblem>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl<T> Manifest<T> {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Parse JSON Lines text. Blank lines are ignored.
pub fn parse_manifest<T: ManifestRow>(text: &str) -> (Vec<T>, Vec<RowProblem>) {
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    let mut keys = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(row) => {
                if let Some(k) = row.key() {
                    if !keys.insert(k.to_owned()) {
                        problems.push(RowProblem {
                            line: line_no,
                            message: format!("duplicate id {k:?}"),
                        });
                        continue;
                    }
                }
                rows.push(row);
            }
            Err(e) => problems.push(RowProblem {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    (rows, problems)
}

pub fn read_manifest<T: ManifestRow>(path: &Path) -> Result<Manifest<T>, FeatureIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (rows, problems) = parse_manifest(&text);
    if rows.is_empty() {
        return Err(FeatureIoError::NoValidRows {
            path: path.to_owned(),
            problems,
        });
    }
    for p in &problems {
        log::warn!("{}: {p}", path.display());
    }
    let base_dir = path
        .parent()
        .map(Path::to_owned)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Manifest {
        rows,
        problems,
        base_dir,
    })
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("rows serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), FeatureIoError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(to_jsonl(rows).as_bytes()).map_err(io_err(path))
}
