//! Recall@k scoring, confidence intervals, pairwise chi-square tests and
//! publication-lag histograms.

use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use thiserror::Error;

use crate::index::RetrievalResult;

pub const RECALL_KS: [usize; 3] = [1, 3, 10];
pub const DEFAULT_BUCKET_WEEKS: i64 = 3;
const Z_95: f64 = 1.959_963_984_540_054;
const SECONDS_PER_WEEK: i64 = 7 * 24 * 3600;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no query outcomes to aggregate")]
    EmptyInput,
    #[error("bucket width must be at least one week, got {0}")]
    InvalidBucketWidth(i64),
    #[error("contingency table needs n_a, n_b >= 1 and hits <= n")]
    InvalidCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub source_id: String,
    pub manip_id: String,
    /// 1-based rank of the source, absent when it was not returned.
    pub rank_of_source: Option<usize>,
    pub recall_at_1: u8,
    pub recall_at_3: u8,
    pub recall_at_10: u8,
}

impl QueryOutcome {
    pub fn hit(&self, k: usize) -> bool {
        self.rank_of_source.is_some_and(|r| r <= k)
    }
}

/// Only the designated source counts, even when other near-duplicates rank
/// above it.
pub fn score_query(
    result: &RetrievalResult,
    query_id: &str,
    source_id: &str,
    manip_id: &str,
) -> QueryOutcome {
    let rank = result.rank_of(source_id);
    let hit = |k: usize| u8::from(rank.is_some_and(|r| r <= k));
    QueryOutcome {
        query_id: query_id.to_owned(),
        source_id: source_id.to_owned(),
        manip_id: manip_id.to_owned(),
        rank_of_source: rank,
        recall_at_1: hit(1),
        recall_at_3: hit(3),
        recall_at_10: hit(10),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// 2.5% and 97.5% quantiles of `Binomial(n, p) / n`, i.e. the large-sample
    /// limit of a percentile bootstrap of the mean.
    #[default]
    BinomialPercentile,
    /// `p +/- 1.96 sqrt(p (1 - p) / n)`.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub hits: usize,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Smallest `k` with `P(X <= k) >= q` for `X ~ Binomial(n, p)`.
fn binomial_quantile(dist: &Binomial, n: u64, q: f64) -> u64 {
    (0..n).find(|&k| dist.cdf(k) >= q).unwrap_or(n)
}

/// 95% interval for `hits / n`, clipped to [0, 1].
pub fn proportion(hits: usize, n: usize, method: CiMethod) -> Proportion {
    assert!(n > 0 && hits <= n, "proportion needs 0 <= hits <= n, n > 0");
    let p = hits as f64 / n as f64;
    let (lo, hi) = if hits == 0 || hits == n {
        (p, p)
    } else {
        match method {
            CiMethod::BinomialPercentile => {
                let dist = Binomial::new(p, n as u64).expect("0 < p < 1");
                let lo = binomial_quantile(&dist, n as u64, 0.025);
                let hi = binomial_quantile(&dist, n as u64, 0.975);
                (lo as f64 / n as f64, hi as f64 / n as f64)
            }
            CiMethod::Normal => {
                let half = Z_95 * (p * (1.0 - p) / n as f64).sqrt();
                (p - half, p + half)
            }
        }
    };
    Proportion {
        hits,
        n,
        mean: p,
        ci_low: lo.clamp(0.0, 1.0),
        ci_high: hi.clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRecall {
    pub manip_id: String,
    pub n: usize,
    pub recall_at_1: f64,
    pub recall_at_3: f64,
    pub recall_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub method: String,
    pub ci_method: CiMethod,
    pub n_queries: usize,
    pub recall_at_1: Proportion,
    pub recall_at_3: Proportion,
    pub recall_at_10: Proportion,
    pub per_manipulation: Vec<ManipulationRecall>,
    /// Queries that were never run (generation skips, missing sources,
    /// unreadable inputs), sorted by query id.
    pub skipped: Vec<SkippedQuery>,
    /// Scored queries sorted by query id.
    pub outcomes: Vec<QueryOutcome>,
}

/// Deterministic reduce over outcomes sorted by query id.
pub fn aggregate(
    outcomes: &[QueryOutcome],
    method: &str,
    ci: CiMethod,
) -> Result<EvalReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let n = sorted.len();
    let hits = |k: usize| sorted.iter().filter(|o| o.hit(k)).count();

    let mut groups: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    for o in &sorted {
        let g = groups.entry(o.manip_id.as_str()).or_default();
        g[0] += 1;
        g[1] += usize::from(o.hit(1));
        g[2] += usize::from(o.hit(3));
        g[3] += usize::from(o.hit(10));
    }
    let per_manipulation = groups
        .into_iter()
        .map(|(id, g)| ManipulationRecall {
            manip_id: id.to_owned(),
            n: g[0],
            recall_at_1: g[1] as f64 / g[0] as f64,
            recall_at_3: g[2] as f64 / g[0] as f64,
            recall_at_10: g[3] as f64 / g[0] as f64,
        })
        .collect();

    Ok(EvalReport {
        version: 1,
        method: method.to_owned(),
        ci_method: ci,
        n_queries: n,
        recall_at_1: proportion(hits(1), n, ci),
        recall_at_3: proportion(hits(3), n, ci),
        recall_at_10: proportion(hits(10), n, ci),
        per_manipulation,
        skipped: Vec::new(),
        outcomes: sorted,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-manipulation recall table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("manip_id,n,recall_at_1,recall_at_3,recall_at_10\n");
        for m in &self.per_manipulation {
            s.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4}\n",
                m.manip_id, m.n, m.recall_at_1, m.recall_at_3, m.recall_at_10
            ));
        }
        s
    }

    /// Human-readable summary.
    pub fn to_table(&self) -> String {
        let row = |name: &str, p: &Proportion| {
            format!(
                "{name:<10} {:.3} [{:.2}, {:.2}]\n",
                p.mean, p.ci_low, p.ci_high
            )
        };
        let mut s = format!(
            "method {}: {} queries, {} skipped\n",
            self.method,
            self.n_queries,
            self.skipped.len()
        );
        s.push_str(&row("recall@1", &self.recall_at_1));
        s.push_str(&row("recall@3", &self.recall_at_3));
        s.push_str(&row("recall@10", &self.recall_at_10));
        s.push_str(&format!(
            "\n{:<22} {:>4} {:>6} {:>6}\n",
            "manipulation", "n", "R@3", "R@10"
        ));
        for m in &self.per_manipulation {
            s.push_str(&format!(
                "{:<22} {:>4} {:>6.3} {:>6.3}\n",
                m.manip_id, m.n, m.recall_at_3, m.recall_at_10
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub p_value: f64,
    /// A row or column margin was zero; the test is undefined and reported
    /// as `statistic = 0, p = 1`.
    pub degenerate: bool,
}

/// Two-proportion chi-square test with Yates' continuity correction.
pub fn chi_square_2x2(
    hits_a: usize,
    n_a: usize,
    hits_b: usize,
    n_b: usize,
) -> Result<ChiSquare, EvalError> {
    if n_a == 0 || n_b == 0 || hits_a > n_a || hits_b > n_b {
        return Err(EvalError::InvalidCounts);
    }
    let observed = [
        [hits_a as f64, (n_a - hits_a) as f64],
        [hits_b as f64, (n_b - hits_b) as f64],
    ];
    let rows = [n_a as f64, n_b as f64];
    let cols = [
        observed[0][0] + observed[1][0],
        observed[0][1] + observed[1][1],
    ];
    let total = rows[0] + rows[1];
    if cols.contains(&0.0) {
        return Ok(ChiSquare {
            statistic: 0.0,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let mut statistic = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] * cols[j] / total;
            let dev = ((observed[i][j] - expected).abs() - 0.5).max(0.0);
            statistic += dev * dev / expected;
        }
    }
    let p_value = ChiSquared::new(1.0).expect("1 dof").sf(statistic);
    Ok(ChiSquare {
        statistic,
        p_value,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagRecord {
    pub query_id: String,
    pub query_posted_at: DateTime<FixedOffset>,
    pub match_posted_at: DateTime<FixedOffset>,
}

impl LagRecord {
    /// Whole weeks from the query's post to the match's post, rounded down.
    /// Positive when the query's platform posted first.
    pub fn lag_weeks(&self) -> i64 {
        let secs = (self.match_posted_at - self.query_posted_at).num_seconds();
        secs.div_euclid(SECONDS_PER_WEEK)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagBucket {
    /// Inclusive lower edge in weeks.
    pub start_weeks: i64,
    /// Exclusive upper edge in weeks.
    pub end_weeks: i64,
    pub count: usize,
    pub percentage: f64,
}

/// Non-empty buckets of width `bucket_weeks`, ascending.
pub fn lag_histogram(
    records: &[LagRecord],
    bucket_weeks: i64,
) -> Result<Vec<LagBucket>, EvalError> {
    if bucket_weeks < 1 {
        return Err(EvalError::InvalidBucketWidth(bucket_weeks));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for r in records {
        *counts
            .entry(r.lag_weeks().div_euclid(bucket_weeks))
            .or_default() += 1;
    }
    let total = records.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(b, count)| LagBucket {
            start_weeks: b * bucket_weeks,
            end_weeks: (b + 1) * bucket_weeks,
            count,
            percentage: 100.0 * count as f64 / total,
        })
        .collect())
}

pub fn lag_csv(buckets: &[LagBucket]) -> String {
    let mut s = String::from("bucket_start_weeks,bucket_end_weeks,count,percentage\n");
    for b in buckets {
        s.push_str(&format!(
            "{},{},{},{:.4}\n",
            b.start_weeks, b.end_weeks, b.count, b.percentage
        ));
    }
    s
}
