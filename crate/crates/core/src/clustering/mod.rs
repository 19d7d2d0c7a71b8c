//! Per-bag k-means on l2-normalized embeddings and the instance sampling
//! strategies (cluster-balanced, top-k, uniform random).

mod kmeans;
mod sampling;

use thiserror::Error;

pub use kmeans::{kmeans, ClusterAssignment, KMeansOptions};
pub use sampling::{cluster_sample, random_sample, topk_sample, SamplingPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1, got {0}")]
    InvalidK(usize),
    #[error("embedding matrix needs at least one row")]
    Empty,
    #[error("embedding data has {found} values, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, found: usize },
    #[error("embedding matrix contains a non-finite value")]
    NonFinite,
}

/// `N × l` row-major matrix of instance embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ClusterError> {
        if rows == 0 {
            return Err(ClusterError::Empty);
        }
        if rows * cols != data.len() {
            return Err(ClusterError::Shape {
                rows,
                cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ClusterError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let data = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Rows with norm above 1e-12 are scaled to unit length; others are kept.
pub fn l2_normalize(h: &EmbeddingMatrix) -> EmbeddingMatrix {
    let mut out = h.clone();
    for r in 0..h.rows {
        let row = &mut out.data[r * h.cols..(r + 1) * h.cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
