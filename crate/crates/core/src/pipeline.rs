//! End-to-end stages composed from the modules: query generation, feature
//! extraction, benchmarking, match classification and lag reporting. The CLI
//! is a thin shell over these functions.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, FixedOffset, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, MatchModel, PairFeatures};
use crate::eval::{self, CiMethod, EvalError, EvalReport, LagRecord, SkippedQuery};
use crate::feature_io::{
    self, io_err, ClassifiedRow, CorpusRow, FeatureFile, FeatureIoError, Manifest,
    PerceptualHashHex, Platform, QueryRow,
};
use crate::features::{DescriptorSet, FeatureKind};
use crate::imaging::{self, ImagingError, Raster};
use crate::index::{FlatIndex, IndexError, QueryParams, RetrievalMode, RetrievalResult};
use crate::manip::{self, IDENTITY_ID};
use crate::orb::{self, BinaryDescriptor256, Orb, OrbConfig, PcaConfig, PcaError, PcaModel};
use crate::phash::{self, PerceptualHash};
use crate::synth;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] FeatureIoError),
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: ImagingError },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error("{0}")]
    Data(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[cfg(feature = "parallel")]
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.iter().map(f).collect()
}

pub fn load_image(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    imaging::decode(&bytes).map_err(|source| PipelineError::Image {
        path: path.to_owned(),
        source,
    })
}

pub fn save_png(r: &Raster, path: &Path) -> Result<()> {
    let bytes = r.encode_png()?;
    fs::write(path, bytes).map_err(|e| io_err(path)(e).into())
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// `(id, path)` pairs from either a directory of PNG/JPEG files (id = file
/// stem, sorted by file name) or a corpus manifest.
pub fn list_images(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(io_err(input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        let mut seen = HashMap::new();
        let mut out = Vec::with_capacity(files.len());
        for p in files {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if let Some(prev) = seen.insert(id.clone(), p.clone()) {
                return Err(PipelineError::Data(format!(
                    "{} and {} share the id {id:?}",
                    prev.display(),
                    p.display()
                )));
            }
            out.push((id, p));
        }
        if out.is_empty() {
            return Err(PipelineError::Data(format!(
                "{} contains no PNG or JPEG files",
                input.display()
            )));
        }
        Ok(out)
    } else {
        let m: Manifest<CorpusRow> = feature_io::read_manifest(input)?;
        Ok(m.rows
            .iter()
            .map(|r| (r.id.clone(), m.resolve(&r.path)))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Query generation

/// File name of a generated query.
pub fn query_file_name(source_id: &str, manip_id: &str) -> String {
    format!("{source_id}__{manip_id}.png")
}

/// Write the unmodified source plus every catalog manipulation of each source
/// into `out_dir` and return the ground-truth rows (skips included). Paths in
/// the rows are relative to `out_dir`.
pub fn generate_queries(
    sources: &[(String, Raster)],
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<QueryRow>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let per_source = par_map(sources, |(id, raster)| -> Result<Vec<QueryRow>> {
        let mut rows = Vec::with_capacity(manip::CATALOG_SIZE + 1);
        let name = query_file_name(id, IDENTITY_ID);
        save_png(raster, &out_dir.join(&name))?;
        rows.push(QueryRow {
            query_path: name,
            source_id: id.clone(),
            manip_id: IDENTITY_ID.into(),
            skipped: false,
            reason: None,
        });
        for spec in manip::catalog_with_seed(seed) {
            let name = query_file_name(id, spec.id);
            match manip::apply(raster, &spec) {
                Ok(out) => {
                    save_png(&out, &out_dir.join(&name))?;
                    rows.push(QueryRow {
                        query_path: name,
                        source_id: id.clone(),
                        manip_id: spec.id.into(),
                        skipped: false,
                        reason: None,
                    });
                }
                Err(e) => rows.push(QueryRow {
                    query_path: name,
                    source_id: id.clone(),
                    manip_id: spec.id.into(),
                    skipped: true,
                    reason: Some(e.to_string()),
                }),
            }
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_source {
        rows.extend(r?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Features

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbCode {
    /// Sign bits of the PCA projection (binary/128).
    #[default]
    Bits,
    /// The projection itself (real32/128).
    Float,
}

/// ORB extraction with an optional PCA stage; without PCA the raw 256-bit
/// descriptors are emitted.
#[derive(Debug, Clone)]
pub struct OrbExtractor {
    pub orb: Orb,
    pub pca: Option<PcaModel>,
    pub code: OrbCode,
}

impl OrbExtractor {
    pub fn new(config: OrbConfig, pca: Option<PcaModel>, code: OrbCode) -> Self {
        Self {
            orb: Orb::new(config),
            pca,
            code,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match (&self.pca, self.code) {
            (None, _) => FeatureKind::ORB_RAW,
            (Some(_), OrbCode::Bits) => FeatureKind::ORB_CODE,
            (Some(_), OrbCode::Float) => FeatureKind::ORB_FLOAT,
        }
    }

    pub fn extract(&self, r: &Raster) -> DescriptorSet {
        let features = self.orb.extract(r);
        let descriptors: Vec<BinaryDescriptor256> = features.iter().map(|f| f.descriptor).collect();
        match (&self.pca, self.code) {
            (None, _) => orb::raw_descriptor_set(&features),
            (Some(p), OrbCode::Bits) => p.encode_set(&descriptors),
            (Some(p), OrbCode::Float) => p.encode_set_float(&descriptors),
        }
    }
}

/// Extract features for already-decoded images, in order.
pub fn extract_rasters(images: &[(String, Raster)], ex: &OrbExtractor) -> FeatureFile {
    let sets = par_map(images, |(_, r)| ex.extract(r));
    FeatureFile {
        kind: ex.kind(),
        images: images.iter().map(|(id, _)| id.clone()).zip(sets).collect(),
    }
}

/// Decode and extract every listed image, in order.
pub fn extract_paths(items: &[(String, PathBuf)], ex: &OrbExtractor) -> Result<FeatureFile> {
    let sets = par_map(items, |(_, p)| load_image(p).map(|r| ex.extract(&r)));
    let mut images = Vec::with_capacity(items.len());
    for ((id, _), set) in items.iter().zip(sets) {
        images.push((id.clone(), set?));
    }
    Ok(FeatureFile {
        kind: ex.kind(),
        images,
    })
}

/// Fit the descriptor projection on every raw descriptor in `ff`.
pub fn fit_pca_from_file(ff: &FeatureFile, config: &PcaConfig) -> Result<PcaModel> {
    if ff.kind != FeatureKind::ORB_RAW {
        return Err(PipelineError::Data(format!(
            "PCA needs raw binary/256 descriptors, file holds {}",
            ff.kind
        )));
    }
    let mut descriptors = Vec::with_capacity(ff.feature_count());
    for (_, set) in &ff.images {
        for i in 0..set.len() {
            descriptors.push(BinaryDescriptor256(
                set.binary_row(i).try_into().expect("32-byte rows"),
            ));
        }
    }
    Ok(orb::pca::fit_pca(&descriptors, config)?)
}

pub fn build_index(ff: &FeatureFile) -> Result<FlatIndex> {
    Ok(FlatIndex::build(&ff.images, ff.kind)?)
}

// ---------------------------------------------------------------------------
// Retrieval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Orb,
    Vgg,
    Siamese,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Orb => "orb",
            Method::Vgg => "vgg",
            Method::Siamese => "siamese",
        }
    }

    /// Siamese embeddings are one vector per image and rank by distance; the
    /// local-feature methods vote.
    pub fn mode(self) -> RetrievalMode {
        match self {
            Method::Siamese => RetrievalMode::Distance,
            Method::Orb | Method::Vgg => RetrievalMode::VoteCount,
        }
    }
}

/// Where query features come from.
#[derive(Debug, Clone)]
pub enum QueryFeatures {
    /// Extract from the query image.
    Extract(OrbExtractor),
    /// Look up by query id in a file produced elsewhere.
    Precomputed(FeatureFile),
}

impl QueryFeatures {
    /// Features for a query. Precomputed files are keyed by the query's file
    /// stem, falling back to the path as written in the manifest.
    pub fn for_query(&self, query_id: &str, written: &str, path: &Path) -> Result<DescriptorSet> {
        match self {
            QueryFeatures::Extract(ex) => Ok(ex.extract(&load_image(path)?)),
            QueryFeatures::Precomputed(ff) => ff
                .get(query_id)
                .or_else(|| ff.get(written))
                .cloned()
                .ok_or_else(|| PipelineError::Data(format!("no features for query {query_id:?}"))),
        }
    }
}

/// Run one query in the method's retrieval mode. A query without features
/// retrieves nothing.
pub fn retrieve(
    index: &FlatIndex,
    set: &DescriptorSet,
    method: Method,
    params: QueryParams,
) -> Result<RetrievalResult> {
    match method.mode() {
        RetrievalMode::VoteCount => match index.query_votes(set, params) {
            Err(IndexError::EmptyQuery) => Ok(RetrievalResult {
                mode: RetrievalMode::VoteCount,
                results: Vec::new(),
            }),
            other => Ok(other?),
        },
        RetrievalMode::Distance => match set {
            DescriptorSet::Real { data, dim } if set.len() == 1 && *dim == index.kind().dim() => {
                Ok(index.query_distance(data, params)?)
            }
            _ => Err(PipelineError::Data(format!(
                "distance retrieval needs exactly one {} vector per query, got {} of {}",
                index.kind(),
                set.len(),
                set.kind()
            ))),
        },
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub method: Method,
    pub features: QueryFeatures,
    pub params: QueryParams,
    pub ci: CiMethod,
}

enum QueryRun {
    Scored(eval::QueryOutcome),
    Skipped(SkippedQuery),
}

/// Score every non-skipped query against its source and aggregate. Queries
/// whose source is not indexed, or whose features cannot be obtained, are
/// listed as skipped and excluded.
pub fn run_benchmark(
    index: &FlatIndex,
    queries: &Manifest<QueryRow>,
    cfg: &BenchConfig,
) -> Result<EvalReport> {
    if queries.rows.is_empty() {
        return Err(EvalError::EmptyInput.into());
    }
    let runs = par_map(&queries.rows, |row| -> Result<QueryRun> {
        let query_id = row.query_id();
        let skip = |reason: String| {
            Ok(QueryRun::Skipped(SkippedQuery {
                query_id: query_id.clone(),
                reason,
            }))
        };
        if row.skipped {
            return skip(
                row.reason
                    .clone()
                    .unwrap_or_else(|| "skipped at generation".into()),
            );
        }
        if !index.contains(&row.source_id) {
            return skip(format!("source {:?} is not indexed", row.source_id));
        }
        let set = match cfg.features.for_query(
            &query_id,
            &row.query_path,
            &queries.resolve(&row.query_path),
        ) {
            Ok(s) => s,
            Err(e) => return skip(e.to_string()),
        };
        let result = retrieve(index, &set, cfg.method, cfg.params)?;
        Ok(QueryRun::Scored(eval::score_query(
            &result,
            &query_id,
            &row.source_id,
            &row.manip_id,
        )))
    });
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for run in runs {
        match run? {
            QueryRun::Scored(o) => outcomes.push(o),
            QueryRun::Skipped(s) => skipped.push(s),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} queries skipped", skipped.len());
    }
    let mut report = eval::aggregate(&outcomes, cfg.method.name(), cfg.ci)?;
    skipped.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    report.skipped = skipped;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Classification and lag

/// Query image for `classify`.
#[derive(Debug, Clone)]
pub struct QueryImage {
    pub id: String,
    /// Path as written in the manifest.
    pub written: String,
    pub path: PathBuf,
}

/// Queries from either a query manifest (id = file stem) or a corpus
/// manifest (id = row id).
pub fn read_query_images(path: &Path) -> Result<Vec<QueryImage>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_owned()
        } else {
            base.join(p)
        }
    };
    let (corpus, _) = feature_io::parse_manifest::<CorpusRow>(&text);
    if !corpus.is_empty() {
        return Ok(corpus
            .into_iter()
            .map(|r| QueryImage {
                path: resolve(&r.path),
                id: r.id,
                written: r.path,
            })
            .collect());
    }
    let m: Manifest<QueryRow> = feature_io::read_manifest(path)?;
    Ok(m.rows
        .into_iter()
        .filter(|r| !r.skipped)
        .map(|r| QueryImage {
            id: r.query_id(),
            path: resolve(&r.query_path),
            written: r.query_path,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ClassifyConfig {
    pub method: Method,
    pub features: QueryFeatures,
    pub params: QueryParams,
}

/// Label the first-ranked result of every query. Queries that retrieve
/// nothing are left out.
pub fn classify(
    index: &FlatIndex,
    queries: &[QueryImage],
    cfg: &ClassifyConfig,
    model: &MatchModel,
    corpus: &Manifest<CorpusRow>,
) -> Result<Vec<ClassifiedRow>> {
    if model.mode != cfg.method.mode() {
        return Err(ClassifierError::ModeMismatch {
            expected: model.mode,
            found: cfg.method.mode(),
        }
        .into());
    }
    let paths: HashMap<&str, PathBuf> = corpus
        .rows
        .iter()
        .map(|r| (r.id.as_str(), corpus.resolve(&r.path)))
        .collect();
    let rows = par_map(queries, |q| -> Result<Option<ClassifiedRow>> {
        let set = cfg.features.for_query(&q.id, &q.written, &q.path)?;
        let result = retrieve(index, &set, cfg.method, cfg.params)?;
        let Some(top) = result.results.first() else {
            return Ok(None);
        };
        let result_path = paths.get(top.image_id.as_str()).ok_or_else(|| {
            PipelineError::Data(format!("{:?} is not in the corpus manifest", top.image_id))
        })?;
        let qh = phash::phash(&load_image(&q.path)?);
        let rh = phash::phash(&load_image(result_path)?);
        let features = PairFeatures {
            phash_dist: qh.distance(rh),
            retrieval_score: top.score,
            mode: result.mode,
        };
        let prediction = model.predict(&features)?;
        Ok(Some(ClassifiedRow {
            query_id: q.id.clone(),
            result_id: top.image_id.clone(),
            query_phash: PerceptualHashHex(qh),
            result_phash: PerceptualHashHex(rh),
            phash_dist: features.phash_dist,
            retrieval_score: features.retrieval_score,
            mode: features.mode,
            probability: prediction.probability,
            label: prediction.label,
        }))
    });
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Lag records for rows labelled as matches. Rows whose ids are missing from
/// the corpus are counted and dropped.
pub fn lag_records(rows: &[ClassifiedRow], corpus: &[CorpusRow]) -> (Vec<LagRecord>, usize) {
    let dates: HashMap<&str, DateTime<FixedOffset>> = corpus
        .iter()
        .map(|r| (r.id.as_str(), r.posted_at))
        .collect();
    let mut missing = 0;
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.label.is_match()) {
        match (
            dates.get(r.query_id.as_str()),
            dates.get(r.result_id.as_str()),
        ) {
            (Some(&q), Some(&m)) => out.push(LagRecord {
                query_id: r.query_id.clone(),
                query_posted_at: q,
                match_posted_at: m,
            }),
            _ => missing += 1,
        }
    }
    (out, missing)
}

pub fn phash_file(path: &Path) -> Result<PerceptualHash> {
    Ok(phash::phash(&load_image(path)?))
}

/// Write `n` synthetic images and a corpus manifest with made-up platforms
/// and post dates into `out_dir`.
pub fn write_synthetic_corpus(out_dir: &Path, n: usize, seed: u64) -> Result<Vec<CorpusRow>> {
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let ids: Vec<usize> = (0..n).collect();
    par_map(&ids, |&i| {
        save_png(
            &synth::corpus_image(seed, i),
            &img_dir.join(format!("{}.png", synth::corpus_id(i))),
        )
    })
    .into_iter()
    .collect::<Result<()>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7E);
    let epoch = Utc
        .with_ymd_and_hms(2020, 1, 1, 0, 0, 0)
        .unwrap()
        .fixed_offset();
    let platforms = [Platform::Reddit, Platform::FourChan, Platform::Twitter];
    let rows: Vec<CorpusRow> = ids
        .iter()
        .map(|&i| CorpusRow {
            id: synth::corpus_id(i),
            path: format!("images/{}.png", synth::corpus_id(i)),
            platform: platforms[i % platforms.len()],
            posted_at: epoch + Duration::minutes(rng.random_range(0..60 * 24 * 365)),
            url: None,
        })
        .collect();
    feature_io::write_jsonl(&out_dir.join("corpus.jsonl"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_queries_cover_catalog_plus_identity() {
        let dir = tempfile::tempdir().unwrap();
        let sources = vec![
            ("a".to_string(), synth::image(1, 120, 90)),
            ("tiny".to_string(), synth::image(2, 2, 2)),
        ];
        let rows = generate_queries(&sources, dir.path(), 0).unwrap();
        assert_eq!(rows.len(), 2 * (manip::CATALOG_SIZE + 1));
        assert_eq!(rows[0].manip_id, IDENTITY_ID);
        for r in rows.iter().filter(|r| !r.skipped) {
            assert!(dir.path().join(&r.query_path).is_file(), "{}", r.query_path);
        }
        let tiny_skips = rows
            .iter()
            .filter(|r| r.source_id == "tiny" && r.skipped)
            .count();
        assert!(tiny_skips > 0);
        let first = load_image(&dir.path().join("a__identity.png")).unwrap();
        assert_eq!(first, sources[0].1);
    }

    #[test]
    fn method_modes() {
        assert_eq!(Method::Orb.mode(), RetrievalMode::VoteCount);
        assert_eq!(Method::Siamese.mode(), RetrievalMode::Distance);
    }

    #[test]
    fn list_images_sorts_directory() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png", "notes.txt"] {
            let r = synth::image(3, 40, 40);
            if name.ends_with(".png") {
                save_png(&r, &dir.path().join(name)).unwrap();
            } else {
                fs::write(dir.path().join(name), "x").unwrap();
            }
        }
        let ids: Vec<String> = list_images(dir.path())
            .unwrap()
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }
}
