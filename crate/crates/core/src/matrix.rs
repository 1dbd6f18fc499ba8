use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("feature matrix shape mismatch: {0}")]
pub struct ShapeError(pub String);

/// Dense `samples x dims` matrix stored column by column, so that every
/// feature dimension is one contiguous slice.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    samples: usize,
    dims: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(samples: usize, dims: usize) -> Self {
        Self {
            samples,
            dims,
            data: vec![0.0; samples * dims],
        }
    }

    pub fn from_columns(samples: usize, columns: Vec<Vec<f64>>) -> Result<Self, ShapeError> {
        let dims = columns.len();
        let mut data = Vec::with_capacity(samples * dims);
        for (d, col) in columns.into_iter().enumerate() {
            if col.len() != samples {
                return Err(ShapeError(format!(
                    "column {d} has {} rows, expected {samples}",
                    col.len()
                )));
            }
            data.extend(col);
        }
        Ok(Self {
            samples,
            dims,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ShapeError> {
        let samples = rows.len();
        let dims = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(samples, dims);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dims {
                return Err(ShapeError(format!(
                    "row {i} has {} values, expected {dims}",
                    row.len()
                )));
            }
            for (d, &v) in row.iter().enumerate() {
                m.data[d * samples + i] = v;
            }
        }
        Ok(m)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn column(&self, d: usize) -> &[f64] {
        &self.data[d * self.samples..(d + 1) * self.samples]
    }

    #[inline]
    pub fn get(&self, sample: usize, d: usize) -> f64 {
        self.data[d * self.samples + sample]
    }

    pub fn row(&self, sample: usize) -> Vec<f64> {
        (0..self.dims).map(|d| self.get(sample, d)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples,
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub(crate) fn columns_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.samples.max(1))
    }
}
