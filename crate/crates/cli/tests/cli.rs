use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nearmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nearmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nearmatch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = nearmatch(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_argument_prints_subcommand_synopsis() {
    let out = nearmatch(&["build-index"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("build-index"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nearmatch(&[
        "build-index",
        "/no/such/file.ndf1",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_index_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ndix");
    fs::write(&bad, b"NDIX\x01\x00garbage").unwrap();
    let img = dir.path().join("q.png");
    fs::write(&img, b"not an image").unwrap();
    let out = nearmatch(&["query", s(&bad), s(&img)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt index"));
}

/// synth-corpus -> gen-manips -> extract-orb -> fit-pca -> extract-orb --pca
/// -> build-index -> bench; returns the bench output directory.
fn pipeline(root: &Path, jobs: &str) -> std::path::PathBuf {
    let corpus = root.join("corpus");
    ok(&[
        "synth-corpus",
        "--out",
        s(&corpus),
        "--count",
        "30",
        "--jobs",
        jobs,
    ]);
    let manifest = corpus.join("corpus.jsonl");
    let queries = root.join("queries");
    ok(&[
        "gen-manips",
        s(&manifest),
        "--out",
        s(&queries),
        "--sources",
        "img00003,img00017",
        "--jobs",
        jobs,
    ]);
    let raw = root.join("raw.ndf1");
    ok(&[
        "extract-orb",
        s(&manifest),
        "--out",
        s(&raw),
        "--jobs",
        jobs,
    ]);
    let pca = root.join("pca.bin");
    ok(&["fit-pca", s(&raw), "--out", s(&pca)]);
    let codes = root.join("codes.ndf1");
    ok(&[
        "extract-orb",
        s(&manifest),
        "--pca",
        s(&pca),
        "--out",
        s(&codes),
        "--jobs",
        jobs,
    ]);
    let index = root.join("index.ndix");
    ok(&["build-index", s(&codes), "--out", s(&index)]);
    let bench = root.join("bench");
    ok(&[
        "bench",
        s(&index),
        s(&queries.join("queries.jsonl")),
        "--pca",
        s(&pca),
        "--out",
        s(&bench),
        "--jobs",
        jobs,
    ]);
    bench
}

#[test]
fn full_pipeline_is_reproducible_and_self_matches() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let bench_a = pipeline(a.path(), "1");
    let bench_b = pipeline(b.path(), "4");

    let ra = fs::read(bench_a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(bench_b.join("report.json")).unwrap());
    assert_eq!(
        fs::read(a.path().join("index.ndix")).unwrap(),
        fs::read(b.path().join("index.ndix")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["version"], 1);
    assert_eq!(report["method"], "orb");
    for key in ["recall_at_1", "recall_at_3", "recall_at_10"] {
        assert!(report[key]["mean"].is_number(), "{key}");
    }
    assert_eq!(report["n_queries"], 46);
    let csv = fs::read_to_string(bench_a.join("report.csv")).unwrap();
    assert!(csv.starts_with("manip_id,n,recall_at_1"));

    // Querying with an indexed image returns it first.
    let root = a.path();
    let out = ok(&[
        "query",
        s(&root.join("index.ndix")),
        s(&root.join("corpus/images/img00005.png")),
        "--pca",
        s(&root.join("pca.bin")),
        "--n",
        "3",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["version"], 1);
    assert_eq!(v["mode"], "vote_count");
    assert_eq!(v["results"][0]["image_id"], "img00005");
    assert_eq!(v["results"][0]["rank"], 1);
    assert_eq!(v["results"].as_array().unwrap().len(), 3);

    // The same query from the feature file.
    let out = ok(&[
        "query",
        s(&root.join("index.ndix")),
        s(&root.join("codes.ndf1")),
        "--id",
        "img00011",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["results"][0]["image_id"], "img00011");

    // Raw features without --pca do not fit a PCA-code index.
    let out = nearmatch(&[
        "query",
        s(&root.join("index.ndix")),
        s(&root.join("corpus/images/img00005.png")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phash_prints_hex() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth-corpus", "--out", s(dir.path()), "--count", "2"]);
    let img = dir.path().join("images/img00000.png");
    let out = ok(&["phash", s(&img), s(&img)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    let hash = lines[0].split_whitespace().next().unwrap();
    assert_eq!(hash.len(), 16);
    assert!(hash
        .chars()
        .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    assert_eq!(lines[0], lines[1]);
}

#[test]
fn train_classify_and_lag_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    ok(&["synth-corpus", "--out", s(&corpus), "--count", "12"]);
    let manifest = corpus.join("corpus.jsonl");
    let codes = root.join("raw.ndf1");
    ok(&["extract-orb", s(&manifest), "--out", s(&codes)]);
    let index = root.join("index.ndix");
    ok(&["build-index", s(&codes), "--out", s(&index)]);

    let mut pairs = String::new();
    for i in 0..30 {
        let is_match = i % 2 == 0;
        let (d, score) = if is_match {
            (i % 6, 150 + i)
        } else {
            (20 + i, 5 + i % 7)
        };
        pairs.push_str(&format!(
            "{{\"query_id\":\"q{i}\",\"result_id\":\"r{i}\",\"phash_dist\":{d},\"retrieval_score\":{score},\"mode\":\"vote_count\",\"label\":\"{}\"}}\n",
            if is_match { "match" } else { "no-match" }
        ));
    }
    let pairs_path = root.join("pairs.jsonl");
    fs::write(&pairs_path, pairs).unwrap();
    let model = root.join("model.json");
    let out = ok(&[
        "train-matcher",
        s(&pairs_path),
        "--out",
        s(&model),
        "--loocv",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["train_accuracy"], 1.0);
    assert_eq!(summary["auc"], 1.0);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&model).unwrap()).unwrap();
    assert_eq!(m["version"], 1);
    assert_eq!(m["mode"], "vote_count");

    // Every corpus image queried against itself: a confident match.
    let classified = root.join("classified.jsonl");
    ok(&[
        "classify",
        s(&index),
        s(&manifest),
        "--model",
        s(&model),
        "--corpus",
        s(&manifest),
        // Few neighbours per feature: with k near the corpus size every image
        // collects votes.
        "--k",
        "2",
        "--out",
        s(&classified),
    ]);
    let text = fs::read_to_string(&classified).unwrap();
    let rows: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert_eq!(r["query_id"], r["result_id"]);
        assert_eq!(r["phash_dist"], 0);
        assert_eq!(r["label"], "match");
    }

    let csv = ok(&["lag-report", s(&classified), s(&manifest)]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("bucket_start_weeks,bucket_end_weeks,count,percentage")
    );
    // Self matches have zero lag.
    assert_eq!(lines.next(), Some("0,3,12,100.0000"));
}
