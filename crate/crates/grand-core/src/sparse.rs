//! Compressed sparse row operators over a shared sparsity pattern.
//!
//! Patterns are immutable and shared (`Arc`) between the operators built on
//! them: an attention matrix, its shifted form, and the per-step operators
//! all reuse one structure. Unlike the base [`crate::graph::Graph`], a
//! pattern may contain self-loops and need not be symmetric; rewiring
//! produces both.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use ndarray::Array2;
use rayon::prelude::*;

use crate::field::NodeField;
use crate::graph::Graph;

/// Sparsity structure: `n x n`, rows sorted, possibly asymmetric.
#[derive(Debug, Default)]
pub struct CsrPattern {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    transpose_cache: OnceLock<Box<(CsrPattern, Vec<usize>)>>,
}

impl Clone for CsrPattern {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            transpose_cache: OnceLock::new(),
        }
    }
}

impl PartialEq for CsrPattern {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
    }
}

impl CsrPattern {
    pub fn new(n: usize, row_offsets: Vec<usize>, col_indices: Vec<usize>) -> Self {
        debug_assert_eq!(row_offsets.len(), n + 1);
        debug_assert!(row_offsets.windows(2).all(|w| w[0] <= w[1]));
        Self { n, row_offsets, col_indices, transpose_cache: OnceLock::new() }
    }

    /// Adjacency pattern of a graph (both orientations, no self-loops).
    pub fn from_graph(g: &Graph) -> Self {
        Self::new(g.n(), g.row_offsets().to_vec(), g.col_indices().to_vec())
    }

    /// Builds a pattern from directed entries `(row, col)`, sorting and
    /// deduplicating per row.
    pub fn from_entries(n: usize, entries: &[(usize, usize)]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in entries {
            rows[i].push(j);
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(entries.len());
        row_offsets.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            col_indices.extend_from_slice(&cols);
            row_offsets.push(col_indices.len());
        }
        Self::new(n, row_offsets, col_indices)
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_range(i)]
    }

    pub fn row_is_empty(&self, i: usize) -> bool {
        self.row_offsets[i] == self.row_offsets[i + 1]
    }

    /// Position of entry `(i, j)` in the value array, if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_offsets[i];
        self.row_cols(i).binary_search(&j).ok().map(|k| lo + k)
    }

    /// Pattern of the transpose, with a map from transposed entry position
    /// back to the originating entry position.
    pub fn transpose(&self) -> (CsrPattern, Vec<usize>) {
        let n = self.n;
        let mut counts = vec![0usize; n];
        for &j in &self.col_indices {
            counts[j] += 1;
        }
        let mut row_offsets = vec![0usize; n + 1];
        for i in 0..n {
            row_offsets[i + 1] = row_offsets[i] + counts[i];
        }
        let mut col_indices = vec![0usize; self.nnz()];
        let mut source = vec![0usize; self.nnz()];
        let mut cursor = row_offsets.clone();
        for i in 0..n {
            for pos in self.row_range(i) {
                let j = self.col_indices[pos];
                col_indices[cursor[j]] = i;
                source[cursor[j]] = pos;
                cursor[j] += 1;
            }
        }
        (CsrPattern::new(n, row_offsets, col_indices), source)
    }

    /// Cached transpose; built on first use, shared by later calls.
    pub fn transpose_cached(&self) -> &(CsrPattern, Vec<usize>) {
        self.transpose_cache.get_or_init(|| Box::new(self.transpose()))
    }

    /// This pattern with the diagonal forced in; returns the new pattern and,
    /// for every old entry, its position in the new value array.
    pub fn with_diagonal(&self) -> (CsrPattern, Vec<usize>) {
        let n = self.n;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut remap = vec![0usize; self.nnz()];
        row_offsets.push(0);
        for i in 0..n {
            let mut placed_diag = false;
            for pos in self.row_range(i) {
                let j = self.col_indices[pos];
                if !placed_diag && j > i {
                    col_indices.push(i);
                    placed_diag = true;
                }
                if j == i {
                    placed_diag = true;
                }
                remap[pos] = col_indices.len();
                col_indices.push(j);
            }
            if !placed_diag {
                col_indices.push(i);
            }
            row_offsets.push(col_indices.len());
        }
        (CsrPattern::new(n, row_offsets, col_indices), remap)
    }
}

/// Sparse real matrix on a shared pattern. Attention operators, their
/// shifted forms and step operators are all instances of this type.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<f64>) -> Self {
        debug_assert_eq!(pattern.nnz(), values.len());
        Self { pattern, values }
    }

    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let nnz = pattern.nnz();
        Self { pattern, values: vec![0.0; nnz] }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |pos| self.values[pos])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.pattern.row_range(i).map(|p| self.values[p]).sum())
            .collect()
    }

    /// `Y = M X` with `X` an `n x d` field. Rows are independent, so the
    /// parallel split is bitwise deterministic.
    pub fn matvec(&self, x: &NodeField) -> NodeField {
        let n = self.n();
        let d = x.channels();
        let xv = x.values();
        let mut out = Array2::zeros((n, d));
        let pattern = &*self.pattern;
        let values = &self.values;
        out.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for pos in pattern.row_range(i) {
                    let j = pattern.col_indices[pos];
                    let a = values[pos];
                    for c in 0..d {
                        row[c] += a * xv[(j, c)];
                    }
                }
            });
        NodeField::from_array(out)
    }

    /// `Y = M^T X`, computed through an explicit transpose so each output
    /// row accumulates sequentially (deterministic under parallelism).
    pub fn transpose_matvec(&self, x: &NodeField) -> NodeField {
        let (tpat, source) = self.pattern.transpose_cached();
        let d = x.channels();
        let xv = x.values();
        let mut out = Array2::zeros((self.n(), d));
        let values = &self.values;
        out.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for pos in tpat.row_range(i) {
                    let j = tpat.col_indices[pos];
                    let a = values[source[pos]];
                    for c in 0..d {
                        row[c] += a * xv[(j, c)];
                    }
                }
            });
        NodeField::from_array(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for pos in self.pattern.row_range(i) {
                m[(i, self.pattern.col_indices[pos])] = self.values[pos];
            }
        }
        m
    }

    /// Entrywise mean of operators sharing one pattern.
    pub fn mean(ops: &[SparseOperator]) -> Option<SparseOperator> {
        let first = ops.first()?;
        let mut values = vec![0.0; first.values.len()];
        for op in ops {
            if op.pattern != first.pattern {
                return None;
            }
            for (acc, v) in values.iter_mut().zip(&op.values) {
                *acc += v;
            }
        }
        let inv = 1.0 / ops.len() as f64;
        for v in &mut values {
            *v *= inv;
        }
        Some(SparseOperator::new(first.pattern.clone(), values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tri_pattern() -> Arc<CsrPattern> {
        Arc::new(CsrPattern::from_entries(
            3,
            &[(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)],
        ))
    }

    #[test]
    fn find_and_entry() {
        let p = tri_pattern();
        let m = SparseOperator::new(p, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.entry(0, 2), 2.0);
        assert_eq!(m.entry(2, 1), 6.0);
        assert_eq!(m.entry(0, 0), 0.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let p = tri_pattern();
        let m = SparseOperator::new(p, vec![0.5, 0.5, 0.3, 0.7, 0.9, 0.1]);
        let x = NodeField::new(array![[1.0, 2.0], [3.0, -1.0], [0.0, 4.0]]).unwrap();
        let y = m.matvec(&x);
        let dense = m.to_dense();
        for i in 0..3 {
            for c in 0..2 {
                let want: f64 = (0..3).map(|j| dense[(i, j)] * x.values()[(j, c)]).sum();
                assert!((y.values()[(i, c)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn transpose_matvec_matches_dense() {
        let p = Arc::new(CsrPattern::from_entries(3, &[(0, 1), (1, 2), (2, 0), (0, 0)]));
        let m = SparseOperator::new(p, vec![2.0, 1.5, -1.0, 0.25]);
        let x = NodeField::new(array![[1.0], [2.0], [3.0]]).unwrap();
        let y = m.transpose_matvec(&x);
        let dense = m.to_dense().transpose();
        for i in 0..3 {
            let want: f64 = (0..3).map(|j| dense[(i, j)] * x.values()[(j, 0)]).sum();
            assert!((y.values()[(i, 0)] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn with_diagonal_inserts_in_order() {
        let p = CsrPattern::from_entries(3, &[(0, 1), (1, 0), (1, 2), (2, 2)]);
        let (pd, remap) = p.with_diagonal();
        assert_eq!(pd.row_cols(0), &[0, 1]);
        assert_eq!(pd.row_cols(1), &[0, 1, 2]);
        assert_eq!(pd.row_cols(2), &[2]);
        // old entries map to their values' new positions
        assert_eq!(pd.col_indices[remap[0]], 1);
        assert_eq!(pd.col_indices[remap[3]], 2);
    }
}
