//! Sparse undirected graphs and the discrete differential operators on them.
//!
//! Edges are stored once per undirected pair `(i, j)` with `i < j`; both
//! orientations are synthesized in the compressed adjacency so row iteration
//! sees every neighbor. Edge fields are alternating by construction: values
//! live on the canonical orientation and flip sign when read as `(j, i)`.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GrandError, Result};
use crate::field::NodeField;

/// Immutable sparse undirected graph in compressed row form.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    /// Undirected edges, canonical orientation i < j, sorted and deduplicated.
    edges: Vec<(usize, usize)>,
    /// Nonnegative weight per undirected edge.
    weights: Vec<f64>,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    /// Directed entry -> undirected edge index.
    edge_ids: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an edge list with unit weights. Self-loops are
    /// rejected; duplicates (in either orientation) are merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let weights = vec![1.0; edges.len()];
        Self::from_weighted_edges(n, edges, &weights)
    }

    pub fn from_weighted_edges(n: usize, edges: &[(usize, usize)], weights: &[f64]) -> Result<Self> {
        if edges.len() != weights.len() {
            return Err(GrandError::DimensionMismatch {
                context: "graph construction",
                expected: format!("{} weights", edges.len()),
                actual: format!("{}", weights.len()),
            });
        }
        let mut canon: Vec<((usize, usize), f64)> = Vec::with_capacity(edges.len());
        for (&(a, b), &w) in edges.iter().zip(weights) {
            if a == b {
                return Err(GrandError::DataInvariant(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(GrandError::DataInvariant(format!(
                    "edge ({a},{b}) out of range for n={n}"
                )));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(GrandError::DataInvariant(format!(
                    "edge ({a},{b}) has invalid weight {w}"
                )));
            }
            canon.push((if a < b { (a, b) } else { (b, a) }, w));
        }
        canon.sort_by_key(|(e, _)| *e);
        // keeps the first weight of each duplicate run
        canon.dedup_by(|a, b| a.0 == b.0);

        let edges: Vec<(usize, usize)> = canon.iter().map(|(e, _)| *e).collect();
        let weights: Vec<f64> = canon.iter().map(|(_, w)| *w).collect();

        let mut degree = vec![0usize; n];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut row_offsets = vec![0usize; n + 1];
        for i in 0..n {
            row_offsets[i + 1] = row_offsets[i] + degree[i];
        }
        let nnz = row_offsets[n];
        let mut col_indices = vec![0usize; nnz];
        let mut edge_ids = vec![0usize; nnz];
        let mut cursor = row_offsets.clone();
        for (eid, &(i, j)) in edges.iter().enumerate() {
            col_indices[cursor[i]] = j;
            edge_ids[cursor[i]] = eid;
            cursor[i] += 1;
            col_indices[cursor[j]] = i;
            edge_ids[cursor[j]] = eid;
            cursor[j] += 1;
        }
        // Canonical edge order already leaves each row's columns sorted for
        // the lower endpoint but not the upper one; sort rows explicitly.
        for i in 0..n {
            let lo = row_offsets[i];
            let hi = row_offsets[i + 1];
            let mut pairs: Vec<(usize, usize)> = col_indices[lo..hi]
                .iter()
                .copied()
                .zip(edge_ids[lo..hi].iter().copied())
                .collect();
            pairs.sort_unstable();
            for (k, (c, e)) in pairs.into_iter().enumerate() {
                col_indices[lo + k] = c;
                edge_ids[lo + k] = e;
            }
        }

        Ok(Self { n, edges, weights, row_offsets, col_indices, edge_ids })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, edge_id: usize) -> f64 {
        self.weights[edge_id]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Neighbors of `i` with the undirected edge index of each entry.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.edge_ids[lo..hi].iter().copied())
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Connected components labelled by scan order; returns (labels, count).
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for (u, _) in self.neighbors(v) {
                    if label[u] == usize::MAX {
                        label[u] = count;
                        stack.push(u);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    pub fn is_connected(&self) -> bool {
        self.n <= 1 || self.components().1 == 1
    }
}

/// Alternating edge field: one value per undirected edge and channel, read
/// through an orientation sign.
#[derive(Debug, Clone)]
pub struct EdgeField {
    /// Values on the canonical orientation (i < j), edge-major.
    values: Array2<f64>,
}

impl EdgeField {
    pub fn zeros(e: usize, d: usize) -> Self {
        Self { values: Array2::zeros((e, d)) }
    }

    pub fn from_array(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn edge_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Value on edge `edge_id` read in the direction `from -> to`.
    pub fn oriented(&self, g: &Graph, edge_id: usize, from: usize, channel: usize) -> f64 {
        let (i, _) = g.edges()[edge_id];
        let v = self.values[(edge_id, channel)];
        if from == i {
            v
        } else {
            -v
        }
    }
}

/// Discrete gradient: `(grad x)_{ij} = x_j - x_i` on each edge, per channel.
pub fn gradient(g: &Graph, x: &NodeField) -> Result<EdgeField> {
    x.check_rows(g.n(), "gradient")?;
    let d = x.channels();
    let mut values = Array2::zeros((g.edge_count(), d));
    let xv = x.values();
    for (eid, &(i, j)) in g.edges().iter().enumerate() {
        for c in 0..d {
            values[(eid, c)] = xv[(j, c)] - xv[(i, c)];
        }
    }
    Ok(EdgeField { values })
}

/// Discrete divergence: `(div f)_i = sum_j w_ij f_ij`, per channel.
pub fn divergence(g: &Graph, f: &EdgeField) -> Result<NodeField> {
    if f.edge_count() != g.edge_count() {
        return Err(GrandError::DimensionMismatch {
            context: "divergence",
            expected: format!("{} edges", g.edge_count()),
            actual: format!("{}", f.edge_count()),
        });
    }
    let d = f.channels();
    let mut out = Array2::zeros((g.n(), d));
    for i in 0..g.n() {
        for (_, eid) in g.neighbors(i) {
            let w = g.weight(eid);
            for c in 0..d {
                out[(i, c)] += w * f.oriented(g, eid, i, c);
            }
        }
    }
    Ok(NodeField::from_array(out))
}

/// Max residual of the adjointness pairing between gradient and divergence
/// over random scalar fields. With the orientation conventions above the
/// adjoint of the gradient is minus the divergence, so the identity checked
/// is `<grad x, F>_edge + <x, div F>_node = 0`.
pub fn adjointness_check(g: &Graph, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x: Vec<f64> = (0..g.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..g.edge_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = NodeField::from_column(&x);
        let f = EdgeField::from_array(Array2::from_shape_vec((g.edge_count(), 1), f).unwrap());

        let grad = gradient(g, &x).expect("shapes fixed");
        let div = divergence(g, &f).expect("shapes fixed");

        // edge inner product over the canonical orientation, weighted
        let lhs: f64 = (0..g.edge_count())
            .map(|e| g.weight(e) * grad.values()[(e, 0)] * f.values()[(e, 0)])
            .sum();
        let rhs: f64 = (0..g.n()).map(|i| x.values()[(i, 0)] * div.values()[(i, 0)]).sum();
        worst = worst.max((lhs + rhs).abs());
    }
    worst
}
