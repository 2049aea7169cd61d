//! Point sets and the dataset carrier shared by every module.

use crate::error::{GpError, Result};

/// A dense row-major set of `len()` points in `dim()` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(GpError::invalid("point dimension must be at least 1"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(GpError::invalid(format!(
                "buffer of length {} is not a whole number of {}-d points",
                data.len(),
                dim
            )));
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| GpError::invalid("cannot infer dimension of an empty row list"))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(GpError::invalid(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Points::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Points {
            dim: self.dim,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Squared Euclidean distance.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Locations (or scaled features) paired with their responses.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    pub coords: Points,
    pub targets: Vec<f64>,
    /// Optional feature column names followed by the target name.
    pub feature_names: Option<Vec<String>>,
    pub target_name: Option<String>,
}

impl SpatialDataset {
    pub fn new(coords: Points, targets: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(GpError::invalid("dataset must contain at least one point"));
        }
        if coords.len() != targets.len() {
            return Err(GpError::invalid(format!(
                "{} coordinate rows but {} targets",
                coords.len(),
                targets.len()
            )));
        }
        if !coords.all_finite() || !targets.iter().all(|v| v.is_finite()) {
            return Err(GpError::invalid("dataset contains non-finite values"));
        }
        Ok(SpatialDataset {
            coords,
            targets,
            feature_names: None,
            target_name: None,
        })
    }

    pub fn with_names(mut self, features: Vec<String>, target: String) -> Self {
        self.feature_names = Some(features);
        self.target_name = Some(target);
        self
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coords.dim()
    }

    /// Sub-dataset holding the rows at `indices`, names preserved.
    pub fn subset(&self, indices: &[usize]) -> SpatialDataset {
        SpatialDataset {
            coords: self.coords.select(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        }
    }
}
