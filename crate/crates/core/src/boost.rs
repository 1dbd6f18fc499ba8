//! Gentle AdaBoost over sigmoid stumps: select, reweight, accumulate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::FeatureMatrix;
use crate::weaklearner::{SigmoidStump, StumpSearch, WeakLearnerError};

const EXPONENT_CLAMP: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum BoostError {
    #[error("training labels must contain both +1 and -1")]
    SingleClassInput,
    #[error("label {value} at index {index} is not +1 or -1")]
    InvalidLabel { index: usize, value: f64 },
    #[error("need at least one boosting round")]
    NoRounds,
    #[error("expected a {expected}-dimensional input, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    WeakLearner(#[from] WeakLearnerError),
}

/// Additive score `F(x) = sum_m f_m(x)` of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongClassifier {
    pub stumps: Vec<SigmoidStump>,
    pub stump_train_errors: Vec<f64>,
    pub layer_index: usize,
    /// Input dimensionality of the layer.
    pub dims: usize,
}

impl StrongClassifier {
    pub fn empty(layer_index: usize, dims: usize) -> Self {
        Self {
            stumps: Vec::new(),
            stump_train_errors: Vec::new(),
            layer_index,
            dims,
        }
    }

    pub fn len(&self) -> usize {
        self.stumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stumps.is_empty()
    }

    /// Score from a lookup that yields the value of dimension `d`.
    pub(crate) fn score_with(&self, value: impl Fn(usize) -> f64) -> f64 {
        self.stumps.iter().map(|s| s.eval_value(value(s.dim))).sum()
    }
}

pub fn strong_score(sc: &StrongClassifier, x: &[f64]) -> Result<f64, BoostError> {
    if x.len() != sc.dims {
        return Err(BoostError::DimensionMismatch {
            expected: sc.dims,
            got: x.len(),
        });
    }
    Ok(sc.score_with(|d| x[d]))
}

/// Sign of a score with `sign(0) = +1`.
#[inline]
pub fn sign_label(score: f64) -> i8 {
    if score >= 0.0 {
        1
    } else {
        -1
    }
}

pub fn classify(sc: &StrongClassifier, x: &[f64]) -> Result<i8, BoostError> {
    strong_score(sc, x).map(sign_label)
}

/// Positive sample weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Renormalizes `raw`; every entry must be positive and finite.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, WeakLearnerError> {
        if let Some(index) = raw.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(WeakLearnerError::DegenerateWeights {
                index,
                value: raw[index],
            });
        }
        let total: f64 = raw.iter().sum();
        Ok(Self(raw.into_iter().map(|v| v / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `w_i <- w_i * exp(-y_i f_i)` with the exponent clamped to [-30, 30], then
/// renormalized.
pub fn reweight(w: &SampleWeights, y: &[f64], f_values: &[f64]) -> SampleWeights {
    let raw: Vec<f64> =
        w.0.iter()
            .zip(y)
            .zip(f_values)
            .map(|((wi, yi), fi)| wi * (-yi * fi).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp())
            .collect();
    let total: f64 = raw.iter().sum();
    SampleWeights(raw.into_iter().map(|v| v / total).collect())
}

/// Telemetry for one boosting round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub layer: usize,
    pub round: usize,
    pub dim: usize,
    pub threshold: f64,
    pub slope: f64,
    pub offset: f64,
    pub weighted_sse: f64,
    pub train_error: f64,
    /// `(1/N) sum_i exp(-y_i F(x_i))` after this round.
    pub exp_loss: f64,
    /// Unweighted 0/1 error of `sign(F)` after this round.
    pub strong_error: f64,
}

pub fn validate_labels(y: &[f64]) -> Result<(), BoostError> {
    if let Some(index) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(BoostError::InvalidLabel {
            index,
            value: y[index],
        });
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(BoostError::SingleClassInput);
    }
    Ok(())
}

/// Round-by-round boosting state for one layer.
pub struct GentleBoost<'a> {
    search: StumpSearch<'a>,
    y: &'a [f64],
    quantile_count: usize,
    weights: SampleWeights,
    scores: Vec<f64>,
    classifier: StrongClassifier,
    records: Vec<RoundRecord>,
}

impl<'a> GentleBoost<'a> {
    pub fn new(
        features: &'a FeatureMatrix,
        y: &'a [f64],
        quantile_count: usize,
        layer_index: usize,
    ) -> Result<Self, BoostError> {
        if y.len() != features.samples() {
            return Err(BoostError::DimensionMismatch {
                expected: features.samples(),
                got: y.len(),
            });
        }
        validate_labels(y)?;
        let n = y.len();
        Ok(Self {
            search: StumpSearch::new(features)?,
            y,
            quantile_count,
            weights: SampleWeights::uniform(n),
            scores: vec![0.0; n],
            classifier: StrongClassifier::empty(layer_index, features.dims()),
            records: Vec::new(),
        })
    }

    pub fn weights(&self) -> &SampleWeights {
        &self.weights
    }

    /// Current `F(x_i)` for every training sample.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn classifier(&self) -> &StrongClassifier {
        &self.classifier
    }

    pub fn step(&mut self) -> Result<&RoundRecord, BoostError> {
        let fit = self
            .search
            .select(self.weights.as_slice(), self.y, self.quantile_count)?;
        let column = self.search.features().column(fit.stump.dim);
        let f_values: Vec<f64> = column.iter().map(|&x| fit.stump.eval_value(x)).collect();
        self.weights = reweight(&self.weights, self.y, &f_values);
        for (s, f) in self.scores.iter_mut().zip(&f_values) {
            *s += f;
        }
        self.classifier.stumps.push(fit.stump);
        self.classifier.stump_train_errors.push(fit.train_error);

        let n = self.y.len() as f64;
        let exp_loss = self
            .scores
            .iter()
            .zip(self.y)
            .map(|(s, y)| (-y * s).exp())
            .sum::<f64>()
            / n;
        let wrong = self
            .scores
            .iter()
            .zip(self.y)
            .filter(|(s, y)| sign_label(**s) as f64 != **y)
            .count();
        self.records.push(RoundRecord {
            layer: self.classifier.layer_index,
            round: self.classifier.len(),
            dim: fit.stump.dim,
            threshold: fit.stump.threshold,
            slope: fit.stump.slope,
            offset: fit.stump.offset,
            weighted_sse: fit.weighted_sse,
            train_error: fit.train_error,
            exp_loss,
            strong_error: wrong as f64 / n,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> (StrongClassifier, Vec<RoundRecord>) {
        (self.classifier, self.records)
    }
}

/// Runs `rounds` boosting rounds and returns the classifier with its log.
pub fn train_strong_logged(
    features: &FeatureMatrix,
    y: &[f64],
    rounds: usize,
    quantile_count: usize,
    layer_index: usize,
) -> Result<(StrongClassifier, Vec<RoundRecord>), BoostError> {
    if rounds == 0 {
        return Err(BoostError::NoRounds);
    }
    let mut booster = GentleBoost::new(features, y, quantile_count, layer_index)?;
    for _ in 0..rounds {
        booster.step()?;
    }
    Ok(booster.finish())
}

pub fn train_strong(
    features: &FeatureMatrix,
    y: &[f64],
    rounds: usize,
    quantile_count: usize,
) -> Result<StrongClassifier, BoostError> {
    train_strong_logged(features, y, rounds, quantile_count, 1).map(|(sc, _)| sc)
}
