//! Spatial feature maps and the descriptors pooled from them.

mod pooling;
pub(crate) mod sfrf;

pub use pooling::{
    global_average_pool, global_average_pool_backward, l2_normalize_columns, pyramid_pool,
    pyramid_pool_backward, pyramid_window_count,
};
pub use sfrf::{
    load_feature_map, load_pooled, read_feature_map, save_feature_map, save_pooled,
    write_feature_map, PooledFeatures,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SfrError};

/// A dense `channels x height x width` activation grid, channel outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SpatialFeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(SfrError::InvalidInput(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(SfrError::DimensionMismatch(format!(
                "{channels}x{height}x{width} map needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(SfrError::NonFinite(format!("feature map value at index {pos}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    /// Constant-valued map.
    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(channel, row, col)]
    }
}

/// A `dim x count` matrix whose columns are spatial feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: DMatrix<f64>,
    normalized: bool,
    degenerate: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.nrows() == 0 || columns.ncols() == 0 {
            return Err(SfrError::InvalidInput(format!(
                "feature matrix must be non-empty, got {}x{}",
                columns.nrows(),
                columns.ncols()
            )));
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(SfrError::NonFinite("feature matrix entry".into()));
        }
        Ok(Self {
            columns,
            normalized: false,
            degenerate: Vec::new(),
        })
    }

    /// Builds a matrix from column vectors given as slices.
    pub fn from_columns(dim: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if let Some(bad) = columns.iter().find(|c| c.len() != dim) {
            return Err(SfrError::DimensionMismatch(format!(
                "column of length {} in a dim-{dim} matrix",
                bad.len()
            )));
        }
        let flat: Vec<f64> = columns.iter().flatten().copied().collect();
        Self::new(DMatrix::from_vec(dim, columns.len(), flat))
    }

    /// Horizontal concatenation of several matrices sharing a dimension.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| SfrError::InvalidInput("nothing to concatenate".into()))?;
        let dim = first.dim();
        if let Some(bad) = parts.iter().find(|p| p.dim() != dim) {
            return Err(SfrError::DimensionMismatch(format!(
                "cannot concatenate dim {} with dim {dim}",
                bad.dim()
            )));
        }
        let count: usize = parts.iter().map(|p| p.count()).sum();
        let mut out = DMatrix::zeros(dim, count);
        let mut offset = 0;
        for p in parts {
            out.columns_mut(offset, p.count()).copy_from(&p.columns);
            offset += p.count();
        }
        let mut m = Self::new(out)?;
        m.normalized = parts.iter().all(|p| p.normalized);
        let mut offset = 0;
        for p in parts {
            m.degenerate.extend(p.degenerate.iter().map(|i| i + offset));
            offset += p.count();
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn count(&self) -> usize {
        self.columns.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.columns
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Indices of all-zero columns found during normalization.
    pub fn degenerate_columns(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.columns.column(j).iter().copied().collect()
    }
}

/// Per-channel descriptor of a whole feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature(DVector<f64>);

impl GlobalFeature {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SfrError::InvalidInput("global feature must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SfrError::NonFinite("global feature entry".into()));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Square window sizes used by pyramid pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidSpec {
    kernels: Vec<usize>,
    stride: usize,
}

impl PyramidSpec {
    pub fn new(kernels: Vec<usize>, stride: usize) -> Result<Self> {
        if kernels.is_empty() {
            return Err(SfrError::InvalidInput("pyramid needs at least one kernel".into()));
        }
        if kernels[0] == 0 || kernels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SfrError::InvalidInput(format!(
                "pyramid kernels must be positive and strictly increasing, got {kernels:?}"
            )));
        }
        if stride == 0 {
            return Err(SfrError::InvalidInput("pyramid stride must be positive".into()));
        }
        Ok(Self { kernels, stride })
    }

    pub fn kernels(&self) -> &[usize] {
        &self.kernels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            kernels: vec![1, 2, 3, 4],
            stride: 1,
        }
    }
}
