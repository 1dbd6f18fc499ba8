//! Sigmoid regression stumps `f(x) = a * sigmoid(x[d] - delta) + b` fitted by
//! weighted least squares.
//!
//! For a fixed dimension and threshold the model is linear in
//! `z = sigmoid(x[d] - delta)`, so `(a, b)` come from the weighted normal
//! equations. The search runs over every dimension and a per-dimension set
//! of weighted quantile thresholds; ties resolve to the lowest dimension and
//! then the lowest threshold, which keeps the result independent of how the
//! dimensions are partitioned across threads.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::FeatureMatrix;

/// Default number of threshold candidates per dimension.
pub const DEFAULT_QUANTILE_COUNT: usize = 16;
const SIGMOID_CLAMP: f64 = 500.0;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum WeakLearnerError {
    #[error("sample weights must be positive and finite (index {index}: {value})")]
    DegenerateWeights { index: usize, value: f64 },
    #[error("feature matrix has no dimensions or no samples")]
    EmptyFeatureMatrix,
    #[error("no threshold candidates")]
    NoCandidates,
    #[error("stump dimension {dim} out of range for a {len}-dimensional input")]
    DimensionOutOfRange { dim: usize, len: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidStump {
    pub dim: usize,
    pub threshold: f64,
    pub slope: f64,
    pub offset: f64,
}

impl SigmoidStump {
    #[inline]
    pub fn eval_value(&self, value: f64) -> f64 {
        self.slope * sigmoid(value - self.threshold) + self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StumpFitResult {
    pub stump: SigmoidStump,
    pub weighted_sse: f64,
    /// Unweighted 0/1 error of `sign(f)` on the fitting samples.
    pub train_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub offset: f64,
    pub weighted_sse: f64,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)).exp())
}

fn check_weights(w: &[f64]) -> Result<(), WeakLearnerError> {
    match w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(index) => Err(WeakLearnerError::DegenerateWeights {
            index,
            value: w[index],
        }),
        None => Ok(()),
    }
}

fn check_len(name: &str, len: usize, expected: usize) -> Result<(), WeakLearnerError> {
    if len != expected {
        return Err(WeakLearnerError::LengthMismatch(format!(
            "{name} has {len} entries, expected {expected}"
        )));
    }
    Ok(())
}

/// Weighted least squares of `y` on `z` with an intercept.
pub fn fit_ab(z: &[f64], w: &[f64], y: &[f64]) -> Result<LinearFit, WeakLearnerError> {
    if z.is_empty() {
        return Err(WeakLearnerError::EmptyFeatureMatrix);
    }
    check_len("weights", w.len(), z.len())?;
    check_len("labels", y.len(), z.len())?;
    check_weights(w)?;
    Ok(fit_ab_unchecked(z, w, y))
}

#[inline]
fn fit_ab_unchecked(z: &[f64], w: &[f64], y: &[f64]) -> LinearFit {
    let (mut z_mean, mut y_mean) = (0.0, 0.0);
    for i in 0..z.len() {
        z_mean += w[i] * z[i];
        y_mean += w[i] * y[i];
    }
    let (mut cov, mut var) = (0.0, 0.0);
    for i in 0..z.len() {
        let dz = z[i] - z_mean;
        cov += w[i] * dz * (y[i] - y_mean);
        var += w[i] * dz * dz;
    }
    let (slope, offset) = if var < VARIANCE_FLOOR {
        (0.0, y_mean)
    } else {
        let a = cov / var;
        (a, y_mean - a * z_mean)
    };
    let mut sse = 0.0;
    for i in 0..z.len() {
        let r = slope * z[i] + offset - y[i];
        sse += w[i] * r * r;
    }
    LinearFit {
        slope,
        offset,
        weighted_sse: sse,
    }
}

/// `(sse, dim, threshold)` ordering used for every tie-break.
fn better(a: &StumpFitResult, b: &StumpFitResult) -> bool {
    match a.weighted_sse.total_cmp(&b.weighted_sse) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match a.stump.dim.cmp(&b.stump.dim) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.stump.threshold < b.stump.threshold,
        },
    }
}

fn zero_one_error(stump: &SigmoidStump, column: &[f64], y: &[f64]) -> f64 {
    let wrong = column
        .iter()
        .zip(y)
        .filter(|(&x, &yi)| {
            let predicted = if stump.eval_value(x) >= 0.0 {
                1.0
            } else {
                -1.0
            };
            predicted != yi
        })
        .count();
    wrong as f64 / column.len() as f64
}

/// Best threshold among `candidates` for one feature column.
pub fn fit_stump_for_dim(
    dim: usize,
    column: &[f64],
    w: &[f64],
    y: &[f64],
    candidates: &[f64],
) -> Result<StumpFitResult, WeakLearnerError> {
    if column.is_empty() {
        return Err(WeakLearnerError::EmptyFeatureMatrix);
    }
    if candidates.is_empty() {
        return Err(WeakLearnerError::NoCandidates);
    }
    check_len("weights", w.len(), column.len())?;
    check_len("labels", y.len(), column.len())?;
    check_weights(w)?;
    let mut scratch = vec![0.0; column.len()];
    let mut best = best_for_column(dim, column, w, y, candidates, &mut scratch);
    best.train_error = zero_one_error(&best.stump, column, y);
    Ok(best)
}

fn best_for_column(
    dim: usize,
    column: &[f64],
    w: &[f64],
    y: &[f64],
    candidates: &[f64],
    z: &mut [f64],
) -> StumpFitResult {
    let mut best: Option<StumpFitResult> = None;
    for &threshold in candidates {
        for (zi, &x) in z.iter_mut().zip(column) {
            *zi = sigmoid(x - threshold);
        }
        let fit = fit_ab_unchecked(z, w, y);
        let candidate = StumpFitResult {
            stump: SigmoidStump {
                dim,
                threshold,
                slope: fit.slope,
                offset: fit.offset,
            },
            weighted_sse: fit.weighted_sse,
            train_error: f64::NAN,
        };
        if best.as_ref().is_none_or(|b| better(&candidate, b)) {
            best = Some(candidate);
        }
    }
    best.expect("candidates are non-empty")
}

/// Deduplicated weighted quantiles of `column` at levels `(k + 0.5) / count`.
/// `order` must sort `column` ascending.
fn quantiles_from_order(column: &[f64], w: &[f64], order: &[u32], count: usize) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut out: Vec<f64> = Vec::with_capacity(count);
    let mut cumulative = 0.0;
    let mut pos = 0;
    for k in 0..count {
        let target = total * (k as f64 + 0.5) / count as f64;
        while pos + 1 < order.len() && cumulative + w[order[pos] as usize] < target {
            cumulative += w[order[pos] as usize];
            pos += 1;
        }
        let v = column[order[pos] as usize];
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

fn argsort(column: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..column.len() as u32).collect();
    order.sort_by(|&a, &b| {
        column[a as usize]
            .total_cmp(&column[b as usize])
            .then(a.cmp(&b))
    });
    order
}

/// Threshold candidates for one column: the `count` weighted quantiles.
pub fn weighted_quantiles(column: &[f64], w: &[f64], count: usize) -> Vec<f64> {
    if column.is_empty() || count == 0 {
        return Vec::new();
    }
    quantiles_from_order(column, w, &argsort(column), count)
}

/// Exhaustive stump search over a fixed feature matrix. The per-column sort
/// order does not depend on the weights, so it is computed once and reused
/// across boosting rounds.
pub struct StumpSearch<'a> {
    features: &'a FeatureMatrix,
    order: Vec<Vec<u32>>,
}

impl<'a> StumpSearch<'a> {
    pub fn new(features: &'a FeatureMatrix) -> Result<Self, WeakLearnerError> {
        if features.dims() == 0 || features.samples() == 0 {
            return Err(WeakLearnerError::EmptyFeatureMatrix);
        }
        let order = (0..features.dims())
            .into_par_iter()
            .map(|d| argsort(features.column(d)))
            .collect();
        Ok(Self { features, order })
    }

    pub fn features(&self) -> &FeatureMatrix {
        self.features
    }

    pub fn select(
        &self,
        w: &[f64],
        y: &[f64],
        quantile_count: usize,
    ) -> Result<StumpFitResult, WeakLearnerError> {
        let n = self.features.samples();
        check_len("weights", w.len(), n)?;
        check_len("labels", y.len(), n)?;
        check_weights(w)?;
        if quantile_count == 0 {
            return Err(WeakLearnerError::NoCandidates);
        }
        let per_dim: Vec<StumpFitResult> = (0..self.features.dims())
            .into_par_iter()
            .map_init(
                || vec![0.0; n],
                |z, d| {
                    let column = self.features.column(d);
                    let candidates =
                        quantiles_from_order(column, w, &self.order[d], quantile_count);
                    best_for_column(d, column, w, y, &candidates, z)
                },
            )
            .collect();
        let mut best = per_dim
            .into_iter()
            .reduce(|a, b| if better(&b, &a) { b } else { a })
            .expect("at least one dimension");
        best.train_error = zero_one_error(&best.stump, self.features.column(best.stump.dim), y);
        Ok(best)
    }
}

/// One-shot search; see [`StumpSearch`] for repeated use on the same matrix.
pub fn select_stump(
    features: &FeatureMatrix,
    w: &[f64],
    y: &[f64],
    quantile_count: usize,
) -> Result<StumpFitResult, WeakLearnerError> {
    StumpSearch::new(features)?.select(w, y, quantile_count)
}

pub fn stump_apply(stump: &SigmoidStump, x: &[f64]) -> Result<f64, WeakLearnerError> {
    x.get(stump.dim)
        .map(|&v| stump.eval_value(v))
        .ok_or(WeakLearnerError::DimensionOutOfRange {
            dim: stump.dim,
            len: x.len(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    /// Plain normal-equation solve on raw moments (Cramer's rule).
    fn raw_moment_fit(z: &[f64], w: &[f64], y: &[f64]) -> (f64, f64) {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..z.len() {
            s0 += w[i];
            s1 += w[i] * z[i];
            s2 += w[i] * z[i] * z[i];
            t0 += w[i] * y[i];
            t1 += w[i] * z[i] * y[i];
        }
        let det = s0 * s2 - s1 * s1;
        if det.abs() < 1e-12 * s0 * s0 {
            return (0.0, t0 / s0);
        }
        ((s0 * t1 - s1 * t0) / det, (s2 * t0 - s1 * t1) / det)
    }

    fn sse(a: f64, b: f64, z: &[f64], w: &[f64], y: &[f64]) -> f64 {
        z.iter()
            .zip(w)
            .zip(y)
            .map(|((zi, wi), yi)| wi * (a * zi + b - yi).powi(2))
            .sum()
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        let big = sigmoid(600.0);
        assert!(big > 0.0 && big <= 1.0 && big.is_finite());
        let small = sigmoid(-600.0);
        assert!(small > 0.0 && small < 1.0);
        for x in [-3.0, -0.2, 0.7, 12.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
            assert!(sigmoid(x + 0.01) > sigmoid(x));
        }
    }

    #[test]
    fn fit_ab_two_points() {
        let fit = fit_ab(&[1.0, 0.0], &[0.5, 0.5], &[1.0, -1.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.offset + 1.0).abs() < 1e-12);
        assert!(fit.weighted_sse < 1e-24);
        // dense grid agrees on the minimizer
        let (mut best, mut arg) = (f64::INFINITY, (0.0, 0.0));
        for i in -40..=40 {
            for j in -40..=40 {
                let (a, b) = (i as f64 * 0.1, j as f64 * 0.1);
                let s = sse(a, b, &[1.0, 0.0], &[0.5, 0.5], &[1.0, -1.0]);
                if s < best {
                    best = s;
                    arg = (a, b);
                }
            }
        }
        assert!((arg.0 - 2.0).abs() < 1e-9 && (arg.1 + 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_ab_constant_cases() {
        let w = [0.2, 0.3, 0.5];
        let y = [1.0, -1.0, 1.0];
        let fit = fit_ab(&[0.4, 0.4, 0.4], &w, &y).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert!((fit.offset - 0.4).abs() < 1e-15);
        let fit = fit_ab(&[0.1, 0.5, 0.9], &w, &[1.0, 1.0, 1.0]).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.offset - 1.0).abs() < 1e-12);
        assert!(fit.weighted_sse < 1e-24);
    }

    #[test]
    fn fit_ab_rejects_bad_weights() {
        let err = fit_ab(&[0.0, 1.0], &[1.0, 0.0], &[1.0, -1.0]).unwrap_err();
        assert_eq!(
            err,
            WeakLearnerError::DegenerateWeights {
                index: 1,
                value: 0.0
            }
        );
        assert!(fit_ab(&[0.0], &[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn separable_column_is_classified_perfectly() {
        let column: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 10.0 }).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { -1.0 } else { 1.0 }).collect();
        let r = fit_stump_for_dim(0, &column, &uniform(10), &y, &[5.0]).unwrap();
        assert_eq!(r.train_error, 0.0);
        for (&x, &yi) in column.iter().zip(&y) {
            assert_eq!(r.stump.eval_value(x).signum(), yi);
        }
    }

    #[test]
    fn singleton_candidate_equals_fit_ab() {
        let column = [0.3, 1.2, -0.5, 2.0];
        let w = [0.1, 0.2, 0.3, 0.4];
        let y = [1.0, -1.0, -1.0, 1.0];
        let r = fit_stump_for_dim(0, &column, &w, &y, &[0.7]).unwrap();
        let z: Vec<f64> = column.iter().map(|x| sigmoid(x - 0.7)).collect();
        let fit = fit_ab(&z, &w, &y).unwrap();
        assert_eq!(r.stump.slope, fit.slope);
        assert_eq!(r.stump.offset, fit.offset);
        assert_eq!(r.weighted_sse, fit.weighted_sse);
    }

    #[test]
    fn equal_sse_prefers_smaller_threshold() {
        // far thresholds flatten z, both reduce to the constant fit
        let r = fit_stump_for_dim(0, &[0.0, 10.0], &[0.5, 0.5], &[1.0, -1.0], &[100.0, -100.0])
            .unwrap();
        assert_eq!(r.stump.threshold, -100.0);
        assert!(fit_stump_for_dim(0, &[0.0], &[1.0], &[1.0], &[]).is_err());
    }

    #[test]
    fn single_dimension_select_matches_column_fit() {
        let column = vec![0.1, 0.9, 0.4, 1.5, 2.2, 0.05];
        let y = [-1.0, 1.0, -1.0, 1.0, 1.0, -1.0];
        let w = uniform(6);
        let m = FeatureMatrix::from_columns(6, vec![column.clone()]).unwrap();
        let selected = select_stump(&m, &w, &y, 16).unwrap();
        let direct =
            fit_stump_for_dim(0, &column, &w, &y, &weighted_quantiles(&column, &w, 16)).unwrap();
        assert_eq!(selected, direct);
    }

    fn informative_matrix(
        informative: &[usize],
        dims: usize,
        n: usize,
    ) -> (FeatureMatrix, Vec<f64>) {
        let y: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let columns = (0..dims)
            .map(|d| {
                (0..n)
                    .map(|i| {
                        if informative.contains(&d) {
                            if y[i] > 0.0 {
                                3.0 + (i % 3) as f64
                            } else {
                                -3.0 - (i % 3) as f64
                            }
                        } else {
                            // same value pattern for both classes
                            ((i / 2 * 7 + d) % 5) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        (FeatureMatrix::from_columns(n, columns).unwrap(), y)
    }

    #[test]
    fn finds_the_informative_column() {
        let (m, y) = informative_matrix(&[3], 6, 20);
        let r = select_stump(&m, &uniform(20), &y, 16).unwrap();
        assert_eq!(r.stump.dim, 3);
        assert_eq!(r.train_error, 0.0);
        // exhaustive check over all (d, delta)
        let w = uniform(20);
        for d in 0..6 {
            for &delta in &weighted_quantiles(m.column(d), &w, 16) {
                let z: Vec<f64> = m.column(d).iter().map(|x| sigmoid(x - delta)).collect();
                let (a, b) = raw_moment_fit(&z, &w, &y);
                assert!(r.weighted_sse <= sse(a, b, &z, &w, &y) + 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_columns_pick_lowest_index() {
        let (m, y) = informative_matrix(&[2, 5], 7, 20);
        let r = select_stump(&m, &uniform(20), &y, 16).unwrap();
        assert_eq!(r.stump.dim, 2);
    }

    #[test]
    fn empty_matrix() {
        let m = FeatureMatrix::zeros(3, 0);
        assert_eq!(
            select_stump(&m, &uniform(3), &[1.0, -1.0, 1.0], 16).unwrap_err(),
            WeakLearnerError::EmptyFeatureMatrix
        );
    }

    #[test]
    fn quantiles_are_sorted_unique_members() {
        let column = [5.0, 1.0, 1.0, 3.0, 9.0, 2.0, 2.0, 2.0];
        let w = uniform(8);
        let q = weighted_quantiles(&column, &w, 16);
        assert!(q.windows(2).all(|p| p[0] < p[1]));
        assert!(q.iter().all(|v| column.contains(v)));
        assert_eq!(q.first(), Some(&1.0));
        assert_eq!(q.last(), Some(&9.0));
        // heavy weight pulls every quantile onto one value
        let skew = [1e-6, 1e-6, 1e-6, 1.0 - 5e-6, 1e-6, 1e-6, 1e-6, 1e-6];
        assert_eq!(weighted_quantiles(&column, &skew, 4), vec![3.0]);
    }

    #[test]
    fn stump_apply_cases() {
        let s = SigmoidStump {
            dim: 1,
            threshold: 0.0,
            slope: 0.0,
            offset: 0.3,
        };
        assert_eq!(stump_apply(&s, &[9.0, -4.0]).unwrap(), 0.3);
        let s = SigmoidStump {
            dim: 0,
            threshold: 1.5,
            slope: 0.8,
            offset: -0.1,
        };
        assert!((stump_apply(&s, &[1.5]).unwrap() - 0.3).abs() < 1e-15);
        let s = SigmoidStump {
            dim: 0,
            threshold: 0.0,
            slope: 2.0,
            offset: -1.0,
        };
        assert!((stump_apply(&s, &[3f64.ln()]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(
            stump_apply(&s, &[]).unwrap_err(),
            WeakLearnerError::DimensionOutOfRange { dim: 0, len: 0 }
        );
    }

    fn instance() -> impl Strategy<Value = (FeatureMatrix, Vec<f64>, Vec<f64>)> {
        (2usize..=50, 1usize..=10).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n * d),
                proptest::collection::vec(0.05f64..1.0, n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(values, raw_w, labels)| {
                    let columns = values.chunks(n).map(<[f64]>::to_vec).collect();
                    let total: f64 = raw_w.iter().sum();
                    let w = raw_w.iter().map(|v| v / total).collect();
                    let y = labels.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
                    (FeatureMatrix::from_columns(n, columns).unwrap(), w, y)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn never_worse_than_oracle_or_constant((m, w, y) in instance()) {
            let r = select_stump(&m, &w, &y, 16).unwrap();
            let y_mean: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
            let constant: f64 = w.iter().zip(&y).map(|(wi, yi)| wi * (y_mean - yi).powi(2)).sum();
            prop_assert!(r.weighted_sse <= constant + 1e-12);
            let mut oracle = f64::INFINITY;
            for d in 0..m.dims() {
                for &delta in &weighted_quantiles(m.column(d), &w, 16) {
                    let z: Vec<f64> = m.column(d).iter().map(|x| sigmoid(x - delta)).collect();
                    let (a, b) = raw_moment_fit(&z, &w, &y);
                    oracle = oracle.min(sse(a, b, &z, &w, &y));
                }
            }
            prop_assert!(r.weighted_sse <= oracle + 1e-9);
        }

        #[test]
        fn fit_ab_is_stationary(
            z in proptest::collection::vec(-2.0f64..2.0, 2..30),
            seed in any::<u64>(),
        ) {
            let n = z.len();
            let w = uniform(n);
            let y: Vec<f64> = (0..n).map(|i| if (seed >> (i % 64)) & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let fit = fit_ab(&z, &w, &y).unwrap();
            for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
                let perturbed = sse(fit.slope + da, fit.offset + db, &z, &w, &y);
                prop_assert!(perturbed >= fit.weighted_sse - 1e-9);
            }
        }

        #[test]
        fn result_independent_of_thread_count((m, w, y) in instance()) {
            let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
            let a = one.install(|| select_stump(&m, &w, &y, 16).unwrap());
            let b = four.install(|| select_stump(&m, &w, &y, 16).unwrap());
            prop_assert_eq!(a.stump.dim, b.stump.dim);
            prop_assert_eq!(a.stump.threshold.to_bits(), b.stump.threshold.to_bits());
            prop_assert_eq!(a.weighted_sse.to_bits(), b.weighted_sse.to_bits());
        }
    }
}
