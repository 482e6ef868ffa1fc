use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nearmatch::classifier::{self, LabeledPair, MatchModel};
use nearmatch::eval::{self, CiMethod};
use nearmatch::feature_io::{
    self, ClassifiedRow, CorpusRow, FeatureFile, LabeledPairRow, Manifest, QueryRow,
};
use nearmatch::index::{FlatIndex, QueryParams, DEFAULT_K, DEFAULT_N};
use nearmatch::orb::{OrbConfig, PcaConfig, PcaModel};
use nearmatch::pipeline::{
    self, BenchConfig, ClassifyConfig, Method, OrbCode, OrbExtractor, PipelineError, QueryFeatures,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nearmatch", version, about = "Near-duplicate image retrieval")]
struct Cli {
    /// Worker threads for per-image stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image corpus and its manifest.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write every catalog manipulation of each source plus a ground-truth manifest.
    GenManips {
        /// Image directory or corpus manifest.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only use these source ids (comma separated).
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract ORB features (raw 256-bit without --pca).
    ExtractOrb {
        /// Image directory or corpus manifest.
        input: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[command(flatten)]
        orb: OrbArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the 256-to-128 descriptor projection on raw ORB features.
    FitPca {
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = nearmatch::orb::pca::DEFAULT_MAX_SAMPLES)]
        max_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a flat index from a feature file.
    BuildIndex {
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank index images against one query image or feature file.
    Query {
        index: PathBuf,
        /// Image, or feature file whose first entry (or --id) is the query.
        query: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        features: QueryFeatureArgs,
        #[command(flatten)]
        params: ParamArgs,
        /// Print extraction and search wall times to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Run a query manifest against an index and write report.json / report.csv.
    Bench {
        index: PathBuf,
        queries: PathBuf,
        #[command(flatten)]
        features: QueryFeatureArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_enum, default_value_t = CiArg::Binomial)]
        ci: CiArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the perceptual hash of each image.
    Phash {
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Fit the match classifier on a labelled-pair manifest.
    TrainMatcher {
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = classifier::DEFAULT_L2)]
        l2: f64,
        #[arg(long, default_value_t = classifier::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Also report leave-one-out accuracy.
        #[arg(long)]
        loocv: bool,
    },
    /// Label the first-ranked result of each query as match / no-match.
    Classify {
        index: PathBuf,
        /// Query manifest or corpus manifest of query images.
        queries: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Corpus manifest locating the indexed images.
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        features: QueryFeatureArgs,
        #[command(flatten)]
        params: ParamArgs,
        /// Write JSON Lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of posting lag between classified matches.
    LagReport {
        classified: PathBuf,
        corpus: PathBuf,
        #[arg(long, default_value_t = eval::DEFAULT_BUCKET_WEEKS)]
        bucket_weeks: i64,
        /// Write lag.csv here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OrbArgs {
    #[arg(long, value_enum, default_value_t = CodeArg::Bits)]
    orb_code: CodeArg,
    #[arg(long, default_value_t = nearmatch::orb::DEFAULT_MAX_FEATURES)]
    max_features: usize,
}

#[derive(Args)]
struct QueryFeatureArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Orb)]
    method: MethodArg,
    /// PCA model for ORB queries.
    #[arg(long)]
    pca: Option<PathBuf>,
    #[command(flatten)]
    orb: OrbArgs,
    /// Pre-extracted query features, keyed by query id (required for vgg/siamese).
    #[arg(long)]
    query_features: Option<PathBuf>,
}

#[derive(Args)]
struct ParamArgs {
    /// Neighbours per query feature.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Images returned.
    #[arg(long, default_value_t = DEFAULT_N)]
    n: usize,
}

impl ParamArgs {
    fn params(&self) -> QueryParams {
        QueryParams {
            k: self.k,
            n: self.n,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CodeArg {
    Bits,
    Float,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Orb,
    Vgg,
    Siamese,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiArg {
    Binomial,
    Normal,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Data(e.to_string())
    }
}

macro_rules! data_err {
    ($($t:tt)*) => { Failure::Data(format!($($t)*)) };
}

fn wrap<T, E: Into<PipelineError>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::from(e.into()))
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(data_err!("{}: no such file or directory", path.display()))
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| data_err!("{}: {e}", parent.display()))?;
    }
    fs::write(path, bytes).map_err(|e| data_err!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| data_err!("{}: {e}", path.display()))
}

fn load_pca(path: &Path) -> Result<PcaModel, Failure> {
    PcaModel::from_bytes(&read_file(path)?).map_err(|e| data_err!("{}: {e}", path.display()))
}

fn load_index(path: &Path) -> Result<FlatIndex, Failure> {
    FlatIndex::from_bytes(&read_file(path)?).map_err(|e| data_err!("{}: {e}", path.display()))
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Orb => Method::Orb,
        MethodArg::Vgg => Method::Vgg,
        MethodArg::Siamese => Method::Siamese,
    }
}

fn extractor(pca: Option<&Path>, orb: &OrbArgs) -> Result<OrbExtractor, Failure> {
    let pca = pca.map(load_pca).transpose()?;
    let code = match orb.orb_code {
        CodeArg::Bits => OrbCode::Bits,
        CodeArg::Float => OrbCode::Float,
    };
    let config = OrbConfig {
        max_features: orb.max_features,
        ..OrbConfig::default()
    };
    Ok(OrbExtractor::new(config, pca, code))
}

fn query_features(a: &QueryFeatureArgs, index: &FlatIndex) -> Result<QueryFeatures, Failure> {
    if let Some(path) = &a.query_features {
        let ff = wrap(FeatureFile::read(path))?;
        if ff.kind != index.kind() {
            return Err(data_err!(
                "{} holds {} features but the index holds {}",
                path.display(),
                ff.kind,
                index.kind()
            ));
        }
        return Ok(QueryFeatures::Precomputed(ff));
    }
    if !matches!(a.method, MethodArg::Orb) {
        return Err(Failure::Usage(
            "--method vgg/siamese needs --query-features".into(),
        ));
    }
    let ex = extractor(a.pca.as_deref(), &a.orb)?;
    if ex.kind() != index.kind() {
        return Err(data_err!(
            "ORB settings produce {} features but the index holds {}{}",
            ex.kind(),
            index.kind(),
            if a.pca.is_none() {
                " (missing --pca?)"
            } else {
                ""
            }
        ));
    }
    Ok(QueryFeatures::Extract(ex))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SynthCorpus { out, count, seed } => {
            let rows = wrap(pipeline::write_synthetic_corpus(&out, count, seed))?;
            eprintln!(
                "wrote {} images and {}",
                rows.len(),
                out.join("corpus.jsonl").display()
            );
        }
        Command::GenManips {
            input,
            out,
            sources,
            seed,
        } => {
            require(&input)?;
            let mut items = wrap(pipeline::list_images(&input))?;
            if !sources.is_empty() {
                for s in &sources {
                    if !items.iter().any(|(id, _)| id == s) {
                        return Err(data_err!("source {s:?} not found in {}", input.display()));
                    }
                }
                items.retain(|(id, _)| sources.contains(id));
            }
            let mut rasters = Vec::with_capacity(items.len());
            for (id, path) in items {
                rasters.push((id, wrap(pipeline::load_image(&path))?));
            }
            let rows = wrap(pipeline::generate_queries(&rasters, &out, seed))?;
            let manifest = out.join("queries.jsonl");
            wrap(feature_io::write_jsonl(&manifest, &rows))?;
            let skipped = rows.iter().filter(|r| r.skipped).count();
            eprintln!(
                "wrote {} queries ({skipped} skipped) and {}",
                rows.len() - skipped,
                manifest.display()
            );
        }
        Command::ExtractOrb {
            input,
            pca,
            orb,
            out,
        } => {
            require(&input)?;
            let ex = extractor(pca.as_deref(), &orb)?;
            let items = wrap(pipeline::list_images(&input))?;
            let ff = wrap(pipeline::extract_paths(&items, &ex))?;
            write_file(&out, wrap(feature_io::write_features(&ff.images, ff.kind))?)?;
            eprintln!(
                "{} images, {} {} features -> {}",
                ff.images.len(),
                ff.feature_count(),
                ff.kind,
                out.display()
            );
        }
        Command::FitPca {
            features,
            out,
            max_samples,
            seed,
        } => {
            let ff = wrap(FeatureFile::read(&features))?;
            let model = wrap(pipeline::fit_pca_from_file(
                &ff,
                &PcaConfig { max_samples, seed },
            ))?;
            write_file(&out, model.to_bytes())?;
            eprintln!(
                "fitted on {} descriptors -> {}",
                model.trained_on(),
                out.display()
            );
        }
        Command::BuildIndex { features, out } => {
            let ff = wrap(FeatureFile::read(&features))?;
            let ix = wrap(pipeline::build_index(&ff))?;
            write_file(&out, ix.to_bytes())?;
            eprintln!(
                "{} images, {} features -> {}",
                ix.image_count(),
                ix.feature_count(),
                out.display()
            );
        }
        Command::Query {
            index,
            query,
            id,
            features,
            params,
            timing,
        } => {
            let ix = load_index(&index)?;
            require(&query)?;
            let t0 = Instant::now();
            let head = read_file(&query)?;
            let (query_id, set) = if head.starts_with(b"NDF1") {
                let ff = wrap(feature_io::read_features(&head))?;
                let entry = match &id {
                    Some(id) => ff.images.iter().find(|(i, _)| i == id),
                    None => ff.images.first(),
                };
                let (qid, set) = entry
                    .cloned()
                    .ok_or_else(|| data_err!("{}: no matching query entry", query.display()))?;
                (qid, set)
            } else {
                let ex = match query_features(&features, &ix)? {
                    QueryFeatures::Extract(ex) => ex,
                    QueryFeatures::Precomputed(_) => {
                        return Err(Failure::Usage(
                            "pass the feature file itself as the query".into(),
                        ))
                    }
                };
                let r = wrap(pipeline::load_image(&query))?;
                let qid = query
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (qid, ex.extract(&r))
            };
            let extract_time = t0.elapsed();
            let t1 = Instant::now();
            let result = wrap(pipeline::retrieve(
                &ix,
                &set,
                method(features.method),
                params.params(),
            ))?;
            let search_time = t1.elapsed();
            let out = json!({
                "version": 1,
                "query": query_id,
                "query_features": set.len(),
                "mode": result.mode,
                "k": params.k,
                "n": params.n,
                "results": result.results,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            if timing {
                eprintln!(
                    "extract {:.3}s search {:.3}s",
                    extract_time.as_secs_f64(),
                    search_time.as_secs_f64()
                );
            }
        }
        Command::Bench {
            index,
            queries,
            features,
            params,
            ci,
            out,
        } => {
            let ix = load_index(&index)?;
            let manifest: Manifest<QueryRow> = wrap(feature_io::read_manifest(&queries))?;
            let cfg = BenchConfig {
                method: method(features.method),
                features: query_features(&features, &ix)?,
                params: params.params(),
                ci: match ci {
                    CiArg::Binomial => CiMethod::BinomialPercentile,
                    CiArg::Normal => CiMethod::Normal,
                },
            };
            let report = wrap(pipeline::run_benchmark(&ix, &manifest, &cfg))?;
            write_file(&out.join("report.json"), report.to_json())?;
            write_file(&out.join("report.csv"), report.to_csv())?;
            print!("{}", report.to_table());
        }
        Command::Phash { images } => {
            let mut failed = Vec::new();
            for p in &images {
                match pipeline::phash_file(p) {
                    Ok(h) => println!("{h}  {}", p.display()),
                    Err(e) => failed.push(e.to_string()),
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Data(failed.join("\n")));
            }
        }
        Command::TrainMatcher {
            pairs,
            out,
            l2,
            threshold,
            loocv,
        } => {
            let m: Manifest<LabeledPairRow> = wrap(feature_io::read_manifest(&pairs))?;
            let data: Vec<LabeledPair> = m.rows.iter().map(LabeledPair::from).collect();
            let mut model = wrap(classifier::train(&data, l2))?;
            model.threshold = threshold;
            write_file(&out, model.to_json())?;
            let mut summary = json!({
                "version": 1,
                "trained_on": model.trained_on,
                "train_accuracy": wrap(model.accuracy(&data))?,
                "auc": wrap(classifier::auc(&model, &data))?,
            });
            if loocv {
                summary["loocv_accuracy"] = json!(wrap(classifier::loocv(&data, l2))?);
            }
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::Classify {
            index,
            queries,
            model,
            corpus,
            features,
            params,
            out,
        } => {
            let ix = load_index(&index)?;
            let text = String::from_utf8(read_file(&model)?)
                .map_err(|_| data_err!("{}: not UTF-8", model.display()))?;
            let model = wrap(MatchModel::from_json(&text))?;
            let corpus: Manifest<CorpusRow> = wrap(feature_io::read_manifest(&corpus))?;
            require(&queries)?;
            let qs = wrap(pipeline::read_query_images(&queries))?;
            let cfg = ClassifyConfig {
                method: method(features.method),
                features: query_features(&features, &ix)?,
                params: params.params(),
            };
            let rows = wrap(pipeline::classify(&ix, &qs, &cfg, &model, &corpus))?;
            let text = feature_io::to_jsonl(&rows);
            match out {
                Some(p) => write_file(&p, text)?,
                None => print!("{text}"),
            }
            let matches = rows.iter().filter(|r| r.label.is_match()).count();
            eprintln!("{} queries classified, {matches} matches", rows.len());
        }
        Command::LagReport {
            classified,
            corpus,
            bucket_weeks,
            out,
        } => {
            let rows: Manifest<ClassifiedRow> = wrap(feature_io::read_manifest(&classified))?;
            let corpus: Manifest<CorpusRow> = wrap(feature_io::read_manifest(&corpus))?;
            let (records, missing) = pipeline::lag_records(&rows.rows, &corpus.rows);
            if missing > 0 {
                log::warn!("{missing} matched rows reference ids missing from the corpus");
            }
            let buckets = wrap(eval::lag_histogram(&records, bucket_weeks))?;
            let csv = eval::lag_csv(&buckets);
            match out {
                Some(dir) => write_file(&dir.join("lag.csv"), csv)?,
                None => print!("{csv}"),
            }
            eprintln!("{} matched pairs, {missing} without dates", records.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
