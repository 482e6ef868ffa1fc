//! Second-stage match classifier: logistic regression on (pHash distance,
//! retrieval score) deciding whether a top-ranked result is a real
//! near-duplicate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_io::{Label, LabeledPairRow};
use crate::index::RetrievalMode;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_L2: f64 = 1e-4;
const MAX_ITERATIONS: usize = 10_000;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const ARMIJO_C: f64 = 1e-4;
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("training data needs both match and no-match labels")]
    DegenerateLabels,
    #[error("model was trained on {expected:?} scores, got {found:?}")]
    ModeMismatch {
        expected: RetrievalMode,
        found: RetrievalMode,
    },
    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("non-finite feature value")]
    NonFinite,
    #[error("l2 must be finite and non-negative, got {0}")]
    InvalidL2(f64),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub phash_dist: u32,
    pub retrieval_score: f64,
    pub mode: RetrievalMode,
}

impl PairFeatures {
    fn raw(&self) -> [f64; 2] {
        [self.phash_dist as f64, self.retrieval_score]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPair {
    pub features: PairFeatures,
    pub is_match: bool,
}

impl From<&LabeledPairRow> for LabeledPair {
    fn from(r: &LabeledPairRow) -> Self {
        LabeledPair {
            features: PairFeatures {
                phash_dist: r.phash_dist,
                retrieval_score: r.retrieval_score,
                mode: r.mode,
            },
            is_match: r.label.is_match(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchModel {
    pub version: u32,
    pub mode: RetrievalMode,
    pub weights: [f64; 2],
    pub bias: f64,
    pub means: [f64; 2],
    pub sds: [f64; 2],
    pub threshold: f64,
    pub l2: f64,
    pub trained_on: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy plus `(l2 / 2) * |w|^2` over standardized
/// inputs. Parameters are `[w1, w2, bias]`; the bias is not penalized.
#[derive(Debug, Clone)]
pub struct Objective {
    x: Vec<[f64; 2]>,
    y: Vec<f64>,
    l2: f64,
}

impl Objective {
    pub fn new(x: Vec<[f64; 2]>, y: Vec<bool>, l2: f64) -> Self {
        assert_eq!(x.len(), y.len());
        Self {
            x,
            y: y.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
            l2,
        }
    }

    fn logit(theta: &[f64; 3], x: &[f64; 2]) -> f64 {
        theta[0] * x[0] + theta[1] * x[1] + theta[2]
    }

    pub fn loss(&self, theta: &[f64; 3]) -> f64 {
        let n = self.x.len() as f64;
        let data: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, &y)| {
                let z = Self::logit(theta, x);
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n;
        data + 0.5 * self.l2 * (theta[0] * theta[0] + theta[1] * theta[1])
    }

    pub fn gradient(&self, theta: &[f64; 3]) -> [f64; 3] {
        let n = self.x.len() as f64;
        let mut g = [0.0; 3];
        for (x, &y) in self.x.iter().zip(&self.y) {
            let r = sigmoid(Self::logit(theta, x)) - y;
            g[0] += r * x[0];
            g[1] += r * x[1];
            g[2] += r;
        }
        [
            g[0] / n + self.l2 * theta[0],
            g[1] / n + self.l2 * theta[1],
            g[2] / n,
        ]
    }

    /// Gradient descent with backtracking from zero initial weights.
    /// Returns the parameters and the iteration count.
    pub fn minimize(&self) -> ([f64; 3], usize) {
        let mut theta = [0.0; 3];
        let mut f = self.loss(&theta);
        let mut step = 1.0;
        for iter in 0..MAX_ITERATIONS {
            let g = self.gradient(&theta);
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax < GRADIENT_TOLERANCE {
                return (theta, iter);
            }
            let g2: f64 = g.iter().map(|v| v * v).sum();
            // Start a little above the last accepted step, then halve.
            step *= 2.0;
            loop {
                let cand = [
                    theta[0] - step * g[0],
                    theta[1] - step * g[1],
                    theta[2] - step * g[2],
                ];
                let fc = self.loss(&cand);
                if fc <= f - ARMIJO_C * step * g2 {
                    theta = cand;
                    f = fc;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    // No descent possible at machine precision.
                    return (theta, iter);
                }
            }
        }
        (theta, MAX_ITERATIONS)
    }
}

/// Population mean and standard deviation per column; zero SD becomes 1.
fn standardizer(x: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let n = x.len() as f64;
    let mut means = [0.0; 2];
    let mut sds = [0.0; 2];
    for j in 0..2 {
        means[j] = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
        sds[j] = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
    }
    (means, sds)
}

fn check_mode(data: &[LabeledPair]) -> Result<RetrievalMode, ClassifierError> {
    let mode = data[0].features.mode;
    for p in data {
        if p.features.mode != mode {
            return Err(ClassifierError::ModeMismatch {
                expected: mode,
                found: p.features.mode,
            });
        }
        if !p.features.retrieval_score.is_finite() {
            return Err(ClassifierError::NonFinite);
        }
    }
    Ok(mode)
}

/// Fit a model. The optimizer starts from zero and is fully deterministic, so
/// no seed is needed.
pub fn train(data: &[LabeledPair], l2: f64) -> Result<MatchModel, ClassifierError> {
    if !(l2.is_finite() && l2 >= 0.0) {
        return Err(ClassifierError::InvalidL2(l2));
    }
    if data.len() < 2 {
        return Err(ClassifierError::TooFewExamples {
            needed: 2,
            got: data.len(),
        });
    }
    let mode = check_mode(data)?;
    let positives = data.iter().filter(|p| p.is_match).count();
    if positives == 0 || positives == data.len() {
        return Err(ClassifierError::DegenerateLabels);
    }
    let raw: Vec<[f64; 2]> = data.iter().map(|p| p.features.raw()).collect();
    let (means, sds) = standardizer(&raw);
    let z = raw
        .iter()
        .map(|r| [(r[0] - means[0]) / sds[0], (r[1] - means[1]) / sds[1]])
        .collect();
    let objective = Objective::new(z, data.iter().map(|p| p.is_match).collect(), l2);
    let (theta, iterations) = objective.minimize();
    log::debug!("match model converged after {iterations} iterations");
    Ok(MatchModel {
        version: MODEL_VERSION,
        mode,
        weights: [theta[0], theta[1]],
        bias: theta[2],
        means,
        sds,
        threshold: DEFAULT_THRESHOLD,
        l2,
        trained_on: data.len(),
    })
}

impl MatchModel {
    pub fn probability(&self, f: &PairFeatures) -> Result<f64, ClassifierError> {
        if f.mode != self.mode {
            return Err(ClassifierError::ModeMismatch {
                expected: self.mode,
                found: f.mode,
            });
        }
        let r = f.raw();
        let z = (0..2)
            .map(|j| self.weights[j] * (r[j] - self.means[j]) / self.sds[j])
            .sum::<f64>()
            + self.bias;
        Ok(sigmoid(z))
    }

    pub fn predict(&self, f: &PairFeatures) -> Result<Prediction, ClassifierError> {
        let probability = self.probability(f)?;
        let label = if probability >= self.threshold {
            Label::Match
        } else {
            Label::NoMatch
        };
        Ok(Prediction { probability, label })
    }

    pub fn accuracy(&self, data: &[LabeledPair]) -> Result<f64, ClassifierError> {
        let mut correct = 0usize;
        for p in data {
            if self.predict(&p.features)?.label.is_match() == p.is_match {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len().max(1) as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let m: MatchModel =
            serde_json::from_str(text).map_err(|e| ClassifierError::CorruptModel(e.to_string()))?;
        if m.version != MODEL_VERSION {
            return Err(ClassifierError::CorruptModel(format!(
                "unsupported version {}",
                m.version
            )));
        }
        let finite = m
            .weights
            .iter()
            .chain(&m.means)
            .chain(&m.sds)
            .all(|v| v.is_finite())
            && m.bias.is_finite()
            && m.threshold.is_finite();
        if !finite || m.sds.iter().any(|&s| s <= 0.0) {
            return Err(ClassifierError::CorruptModel(
                "weights must be finite and SDs positive".into(),
            ));
        }
        Ok(m)
    }
}

/// Mann-Whitney AUC of `scores` against `labels`; tied pairs count one half.
pub fn auc_from_scores(scores: &[f64], labels: &[bool]) -> Result<f64, ClassifierError> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ClassifierError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn auc(m: &MatchModel, data: &[LabeledPair]) -> Result<f64, ClassifierError> {
    let scores = data
        .iter()
        .map(|p| m.probability(&p.features))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<bool> = data.iter().map(|p| p.is_match).collect();
    auc_from_scores(&scores, &labels)
}

/// Leave-one-out accuracy. A training fold with a single label predicts that
/// label for its held-out item.
pub fn loocv(data: &[LabeledPair], l2: f64) -> Result<f64, ClassifierError> {
    if data.len() < 3 {
        return Err(ClassifierError::TooFewExamples {
            needed: 3,
            got: data.len(),
        });
    }
    check_mode(data)?;
    let positives = data.iter().filter(|p| p.is_match).count();
    if positives == 0 || positives == data.len() {
        return Err(ClassifierError::DegenerateLabels);
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let fold: Vec<LabeledPair> = data
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, p)| *p)
            .collect();
        let predicted = match train(&fold, l2) {
            Ok(m) => m.predict(&data[i].features)?.label.is_match(),
            Err(ClassifierError::DegenerateLabels) => fold[0].is_match,
            Err(e) => return Err(e),
        };
        if predicted == data[i].is_match {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
