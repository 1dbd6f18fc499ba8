//! Pairwise composition of selected features into next-layer candidates.
//!
//! Two selected features of layer `l` whose positions fall into grid cells
//! at most `neighborhood` cells apart (Chebyshev distance) form a composite
//! `x_j = beta_s * x_s + beta_t * x_t` of layer `l + 1`. The betas are
//! proportional to each parent's training accuracy and sum to one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gabor::GaborIndex;
use crate::imageio::CANONICAL_SIDE;
use crate::matrix::FeatureMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("need at least two selected features to compose, got {0}")]
    TooFewFeatures(usize),
    #[error("no training error recorded for feature {0}")]
    MissingErrorRecord(usize),
    #[error("composite parent {index} out of range for {dims} lower-layer features")]
    IndexOutOfRange { index: usize, dims: usize },
    #[error("invalid composition config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Primitive(GaborIndex),
    /// Parents are dimension indices of the previous layer.
    Composite {
        s: usize,
        t: usize,
        beta_s: f64,
        beta_t: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    /// 1 for Gabor primitives.
    pub layer: usize,
    pub provenance: Provenance,
    pub row: u16,
    pub col: u16,
}

impl FeatureDescriptor {
    pub fn primitive(index: GaborIndex) -> Self {
        Self {
            layer: 1,
            provenance: Provenance::Primitive(index),
            row: index.h,
            col: index.w,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionConfig {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Chebyshev radius in cells; 1 means a 3x3 block of cells.
    pub neighborhood: usize,
    pub max_composites: usize,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            cell_size: 12,
            neighborhood: 1,
            max_composites: 8000,
        }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<(), ComposeError> {
        if self.cell_size == 0 {
            return Err(ComposeError::InvalidConfig("cell_size must be >= 1".into()));
        }
        if self.max_composites == 0 {
            return Err(ComposeError::InvalidConfig(
                "max_composites must be >= 1".into(),
            ));
        }
        if !CANONICAL_SIDE.is_multiple_of(self.cell_size) {
            log::warn!(
                "cell size {} does not divide {CANONICAL_SIDE}; the last cell row/column is partial",
                self.cell_size
            );
        }
        Ok(())
    }

    fn cell(&self, fd: &FeatureDescriptor) -> (usize, usize) {
        (
            fd.row as usize / self.cell_size,
            fd.col as usize / self.cell_size,
        )
    }
}

/// A composite in the index space of its parent layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composite {
    pub s: usize,
    pub t: usize,
    pub beta_s: f64,
    pub beta_t: f64,
}

/// `(row, col)` of a feature on the 120x120 lattice.
pub fn feature_position(fd: &FeatureDescriptor) -> (usize, usize) {
    (fd.row as usize, fd.col as usize)
}

/// Midpoint of two positions; halves round down.
pub fn midpoint(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    ((a.0 + b.0) / 2, (a.1 + b.1) / 2)
}

/// All pairs `s < t` of `selected` lying in neighbouring cells, in ascending
/// `(s, t)` order.
pub fn pair_candidates(
    selected: &[FeatureDescriptor],
    cfg: &CompositionConfig,
) -> Result<Vec<(usize, usize)>, ComposeError> {
    if selected.len() < 2 {
        return Err(ComposeError::TooFewFeatures(selected.len()));
    }
    let cells: Vec<(usize, usize)> = selected.iter().map(|fd| cfg.cell(fd)).collect();
    let mut pairs = Vec::new();
    for s in 0..cells.len() {
        for t in s + 1..cells.len() {
            let dr = cells[s].0.abs_diff(cells[t].0);
            let dc = cells[s].1.abs_diff(cells[t].1);
            if dr.max(dc) <= cfg.neighborhood {
                pairs.push((s, t));
            }
        }
    }
    Ok(pairs)
}

/// Accuracy-proportional betas, ranking by `eps_s + eps_t` and truncation to
/// `max_composites`. A pair is dropped when either parent has error 1: its
/// beta would be 0 and the composite a copy of the other parent.
pub fn rank_and_cap(
    pairs: &[(usize, usize)],
    errors: &[Option<f64>],
    cfg: &CompositionConfig,
) -> Result<Vec<Composite>, ComposeError> {
    let error_of = |k: usize| {
        errors
            .get(k)
            .copied()
            .flatten()
            .filter(|e| (0.0..=1.0).contains(e))
            .ok_or(ComposeError::MissingErrorRecord(k))
    };
    let mut ranked = Vec::with_capacity(pairs.len());
    for &(s, t) in pairs {
        let (es, et) = (error_of(s)?, error_of(t)?);
        let (acc_s, acc_t) = (1.0 - es, 1.0 - et);
        if acc_s <= 0.0 || acc_t <= 0.0 {
            continue;
        }
        let total = acc_s + acc_t;
        ranked.push((
            es + et,
            Composite {
                s,
                t,
                beta_s: acc_s / total,
                beta_t: acc_t / total,
            },
        ));
    }
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| (a.1.s, a.1.t).cmp(&(b.1.s, b.1.t)))
    });
    ranked.truncate(cfg.max_composites);
    Ok(ranked.into_iter().map(|(_, c)| c).collect())
}

/// Child feature matrix with column `j = beta_s * col_s + beta_t * col_t`.
pub fn composite_responses(
    lower: &FeatureMatrix,
    composites: &[Composite],
) -> Result<FeatureMatrix, ComposeError> {
    let dims = lower.dims();
    for c in composites {
        for index in [c.s, c.t] {
            if index >= dims {
                return Err(ComposeError::IndexOutOfRange { index, dims });
            }
        }
    }
    let mut out = FeatureMatrix::zeros(lower.samples(), composites.len());
    if lower.samples() == 0 {
        return Ok(out);
    }
    for (column, c) in out.columns_mut().zip(composites) {
        let (xs, xt) = (lower.column(c.s), lower.column(c.t));
        for i in 0..column.len() {
            column[i] = c.beta_s * xs[i] + c.beta_t * xt[i];
        }
    }
    Ok(out)
}

/// Descriptors of `composites`, whose parents index into `lower`.
pub fn composite_descriptors(
    lower: &[FeatureDescriptor],
    composites: &[Composite],
) -> Result<Vec<FeatureDescriptor>, ComposeError> {
    composites
        .iter()
        .map(|c| {
            let parent = |index: usize| {
                lower.get(index).ok_or(ComposeError::IndexOutOfRange {
                    index,
                    dims: lower.len(),
                })
            };
            let (ps, pt) = (parent(c.s)?, parent(c.t)?);
            let (row, col) = midpoint(feature_position(ps), feature_position(pt));
            Ok(FeatureDescriptor {
                layer: ps.layer.max(pt.layer) + 1,
                provenance: Provenance::Composite {
                    s: c.s,
                    t: c.t,
                    beta_s: c.beta_s,
                    beta_t: c.beta_t,
                },
                row: row as u16,
                col: col as u16,
            })
        })
        .collect()
}
