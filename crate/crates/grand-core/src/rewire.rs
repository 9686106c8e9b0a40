//! Spatial rediscretisation: diffusion-based densification and
//! attention-threshold edge selection.
//!
//! Densification computes personalized-PageRank columns by power iteration,
//! keeps the top `K` coefficients per column, and symmetrizes by union.
//! Threshold rewiring keeps directed entries with attention above `rho`;
//! nodes that lose every edge keep a unit self-loop so the operator stays
//! row-stochastic and their features stay constant.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{GrandError, Result};
use crate::graph::Graph;
use crate::sparse::{CsrPattern, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewireMethod {
    Ppr,
    AttentionThreshold,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RewireConfig {
    pub method: RewireMethod,
    /// Teleport probability of the diffusion weights.
    pub alpha: f64,
    /// Coefficients kept per node during densification.
    pub k: usize,
    /// Attention threshold for runtime edge selection.
    pub rho: f64,
    pub allow_self_loops: bool,
}

impl Default for RewireConfig {
    fn default() -> Self {
        Self {
            method: RewireMethod::Ppr,
            alpha: 0.15,
            k: 16,
            rho: 0.0,
            allow_self_loops: true,
        }
    }
}

impl RewireConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GrandError::InvalidConfig(format!(
                "teleport must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.method == RewireMethod::Ppr && self.k == 0 {
            return Err(GrandError::InvalidConfig("kept coefficients must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(GrandError::InvalidConfig(format!(
                "attention threshold must lie in [0,1), got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// One personalized-PageRank column: the fixed point of
/// `s = alpha e_j + (1 - alpha) P s` with `P = D^{-1} W`, found by power
/// iteration to `tol` in the l1 sense.
fn ppr_column(
    g: &Graph,
    degrees: &[f64],
    j: usize,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let n = g.n();
    let mut s = vec![0.0; n];
    s[j] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..max_iters {
        for v in next.iter_mut() {
            *v = 0.0;
        }
        next[j] = alpha;
        for i in 0..n {
            if degrees[i] == 0.0 {
                continue;
            }
            for (nb, eid) in g.neighbors(i) {
                let p = g.weight(eid) / degrees[i];
                next[i] += (1.0 - alpha) * p * s[nb];
            }
        }
        let delta: f64 = next.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut s, &mut next);
        if delta <= tol {
            return Ok(s);
        }
    }
    Err(GrandError::SolverDiverged { iters: max_iters, residual: f64::NAN, tol })
}

/// A densified graph plus the self-loop weights the base type cannot carry.
#[derive(Debug, Clone)]
pub struct RewiredGraph {
    pub graph: Graph,
    pub self_loops: Vec<(usize, f64)>,
    pub kept_per_column: Vec<usize>,
}

impl RewiredGraph {
    /// Attention pattern over the rewired structure, including self-loops
    /// when permitted.
    pub fn pattern(&self, allow_self_loops: bool) -> Arc<CsrPattern> {
        let mut entries: Vec<(usize, usize)> = Vec::new();
        for &(i, j) in self.graph.edges() {
            entries.push((i, j));
            entries.push((j, i));
        }
        if allow_self_loops {
            for &(i, _) in &self.self_loops {
                entries.push((i, i));
            }
        }
        Arc::new(CsrPattern::from_entries(self.graph.n(), &entries))
    }
}

/// Densifies a graph with diffusion weights: computes the PPR matrix
/// `S = alpha (I - (1 - alpha) D^{-1} W)^{-1}` columnwise, keeps the top `K`
/// entries per column, symmetrizes by union, and returns the new weighted
/// graph. Kept self-entries become self-loops, reported separately.
pub fn ppr_densify(g: &Graph, alpha: f64, k: usize) -> Result<RewiredGraph> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GrandError::InvalidConfig(format!("teleport must lie in (0,1), got {alpha}")));
    }
    if k == 0 {
        return Err(GrandError::InvalidConfig("kept coefficients must be >= 1".into()));
    }
    let n = g.n();
    let degrees: Vec<f64> = (0..n)
        .map(|i| g.neighbors(i).map(|(_, e)| g.weight(e)).sum())
        .collect();

    let columns: Result<Vec<Vec<(usize, f64)>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let s = ppr_column(g, &degrees, j, alpha, 1e-8, 100_000)?;
            let mut entries: Vec<(usize, f64)> =
                s.into_iter().enumerate().filter(|&(_, v)| v > 0.0).collect();
            // top-K by score, deterministic tie-break on index
            entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            entries.truncate(k);
            Ok(entries)
        })
        .collect();
    let columns = columns?;

    // union symmetrization: an entry survives if either endpoint kept it
    let mut weight_of: std::collections::BTreeMap<(usize, usize), f64> =
        std::collections::BTreeMap::new();
    for (j, entries) in columns.iter().enumerate() {
        for &(i, v) in entries {
            let key = if i <= j { (i, j) } else { (j, i) };
            let w = weight_of.entry(key).or_insert(0.0);
            *w = w.max(v);
        }
    }

    let mut edges = Vec::new();
    let mut weights = Vec::new();
    let mut self_loops = Vec::new();
    for (&(i, j), &w) in &weight_of {
        if i == j {
            self_loops.push((i, w));
        } else {
            edges.push((i, j));
            weights.push(w);
        }
    }
    let graph = Graph::from_weighted_edges(n, &edges, &weights)?;
    Ok(RewiredGraph {
        graph,
        self_loops,
        kept_per_column: columns.iter().map(|c| c.len()).collect(),
    })
}

/// Keeps the directed entries with `a_ij > rho` and renormalizes each
/// surviving row. Rows that lose every entry keep a unit self-loop.
pub fn threshold_rewire(attention: &SparseOperator, rho: f64) -> Result<SparseOperator> {
    if !(0.0..1.0).contains(&rho) {
        return Err(GrandError::InvalidConfig(format!(
            "attention threshold must lie in [0,1), got {rho}"
        )));
    }
    let n = attention.n();
    let pattern = attention.pattern();
    let mut entries: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let mut kept_any = false;
        for pos in pattern.row_range(i) {
            if attention.values()[pos] > rho {
                entries.push((i, pattern.col_indices[pos]));
                kept_any = true;
            }
        }
        if !kept_any {
            entries.push((i, i));
        }
    }
    let new_pattern = Arc::new(CsrPattern::from_entries(n, &entries));
    let mut out = SparseOperator::zeros(new_pattern.clone());
    for i in 0..n {
        let range = new_pattern.row_range(i);
        let mut sum = 0.0;
        for pos in range.clone() {
            let j = new_pattern.col_indices[pos];
            let v = if j == i && attention.entry(i, i) <= rho {
                1.0 // fallback self-loop
            } else {
                attention.entry(i, j)
            };
            out.values_mut()[pos] = v;
            sum += v;
        }
        if sum > 0.0 {
            let inv = 1.0 / sum;
            for pos in range {
                out.values_mut()[pos] *= inv;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::uniform_attention;

    #[test]
    fn two_node_closed_form_keeps_self_entry() {
        // 2-cycle PPR: S = alpha / (1 - (1-alpha)^2) * [[1, 1-alpha], [1-alpha, 1]]
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let alpha = 0.15;
        let rewired = ppr_densify(&g, alpha, 1).unwrap();
        // top-1 per column is the self entry; union keeps no cross edge
        assert_eq!(rewired.graph.edge_count(), 0);
        assert_eq!(rewired.self_loops.len(), 2);
        let denom = 1.0 - (1.0 - alpha) * (1.0 - alpha);
        let want_diag = alpha / denom;
        for &(_, w) in &rewired.self_loops {
            assert!((w - want_diag).abs() < 1e-6);
        }
    }

    #[test]
    fn star_hub_retained_in_leaf_columns() {
        let g = Graph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let rewired = ppr_densify(&g, 0.15, 2).unwrap();
        for leaf in 1..5 {
            assert!(rewired.graph.edges().contains(&(0, leaf)));
        }
    }

    #[test]
    fn full_k_gives_complete_pattern() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let rewired = ppr_densify(&g, 0.2, 3).unwrap();
        // connected chain: PPR is strictly positive, so every pair survives
        assert_eq!(rewired.graph.edge_count(), 3);
        assert_eq!(rewired.self_loops.len(), 3);
    }

    #[test]
    fn kept_entries_bounded_by_k() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]).unwrap();
        let k = 2;
        let rewired = ppr_densify(&g, 0.15, k).unwrap();
        assert!(rewired.kept_per_column.iter().all(|&c| c <= k));
        let directed_kept: usize = rewired.kept_per_column.iter().sum();
        assert!(directed_kept <= k * g.n());
    }

    #[test]
    fn threshold_zero_keeps_everything() {
        let g = Graph::from_edges(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let a = uniform_attention(&Arc::new(CsrPattern::from_graph(&g)));
        let e = threshold_rewire(&a, 0.0).unwrap();
        assert_eq!(e.pattern().nnz(), a.pattern().nnz());
        for (x, y) in e.values().iter().zip(a.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn orphaned_node_gets_self_loop() {
        // degree-4 node with uniform attention 0.25 <= rho = 0.3
        let g = Graph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let a = uniform_attention(&Arc::new(CsrPattern::from_graph(&g)));
        let e = threshold_rewire(&a, 0.3).unwrap();
        assert_eq!(e.pattern().row_cols(0), &[0]);
        assert!((e.entry(0, 0) - 1.0).abs() < 1e-15);
        // leaves keep their single full-weight edge to the hub
        for leaf in 1..5 {
            assert!((e.entry(leaf, 0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rewired_rows_are_stochastic() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2)]).unwrap();
        let a = uniform_attention(&Arc::new(CsrPattern::from_graph(&g)));
        let e = threshold_rewire(&a, 0.3).unwrap();
        for (i, s) in e.row_sums().iter().enumerate() {
            assert!((s - 1.0).abs() <= 1e-9, "row {i} sums to {s}");
        }
    }
}
