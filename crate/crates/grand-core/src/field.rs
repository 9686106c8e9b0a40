//! Node-valued fields: an `n x d` real matrix, one row per node.

use ndarray::{Array1, Array2};

use crate::error::{GrandError, Result};

/// Vector-valued features on the nodes of a graph. Row `i` holds the
/// `d`-dimensional state of node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    values: Array2<f64>,
}

impl NodeField {
    /// Wraps a dense matrix, rejecting non-finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(GrandError::DataInvariant(
                "node field contains non-finite entries".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Wraps a dense matrix without the finiteness check. Solver internals
    /// use this on states they are about to inspect anyway.
    pub fn from_array(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { values: Array2::zeros((n, d)) }
    }

    pub fn from_column(col: &[f64]) -> Self {
        let values = Array2::from_shape_vec((col.len(), 1), col.to_vec()).unwrap();
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_array(self) -> Array2<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`, elementwise.
    pub fn axpy(&self, scale: f64, other: &NodeField) -> NodeField {
        let mut out = self.values.clone();
        out.scaled_add(scale, &other.values);
        NodeField { values: out }
    }

    /// In-place `self += scale * other`.
    pub fn axpy_inplace(&mut self, scale: f64, other: &NodeField) {
        self.values.scaled_add(scale, &other.values);
    }

    pub fn scale(&self, s: f64) -> NodeField {
        NodeField { values: &self.values * s }
    }

    /// Per-channel minimum over nodes. Empty fields yield an empty vector.
    pub fn channel_min(&self) -> Vec<f64> {
        self.channel_fold(f64::INFINITY, f64::min)
    }

    /// Per-channel maximum over nodes.
    pub fn channel_max(&self) -> Vec<f64> {
        self.channel_fold(f64::NEG_INFINITY, f64::max)
    }

    fn channel_fold(&self, init: f64, f: fn(f64, f64) -> f64) -> Vec<f64> {
        let d = self.channels();
        let mut acc = vec![init; d];
        for row in self.values.rows() {
            for (c, v) in row.iter().enumerate() {
                acc[c] = f(acc[c], *v);
            }
        }
        acc
    }

    /// Largest absolute entry; 0 for empty fields.
    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute difference against another field of the same shape.
    pub fn inf_dist(&self, other: &NodeField) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn check_rows(&self, n: usize, context: &'static str) -> Result<()> {
        if self.n() != n {
            return Err(GrandError::DimensionMismatch {
                context,
                expected: format!("{n} rows"),
                actual: format!("{} rows", self.n()),
            });
        }
        Ok(())
    }
}

/// Column bias broadcast over rows: `x + 1 b^T`.
pub fn add_row_bias(x: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        row += b;
    }
    out
}
