//! Shared fixtures for the integration suites.

use std::sync::Arc;

use grand_core::field::NodeField;
use grand_core::graph::Graph;
use grand_core::sparse::{CsrPattern, SparseOperator};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Connected random graph: a ring plus `extra` random chords.
pub fn random_graph(n: usize, extra: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let mut added = 0;
    while added < extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.push((a.min(b), a.max(b)));
            added += 1;
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Row-stochastic operator with random positive weights on a graph pattern.
pub fn random_attention(g: &Graph, seed: u64) -> SparseOperator {
    let pattern = Arc::new(CsrPattern::from_graph(g));
    random_attention_on(&pattern, seed)
}

pub fn random_attention_on(pattern: &Arc<CsrPattern>, seed: u64) -> SparseOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; pattern.nnz()];
    for i in 0..pattern.n {
        let range = pattern.row_range(i);
        if range.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for pos in range.clone() {
            let v: f64 = rng.gen_range(0.05..1.0);
            values[pos] = v;
            sum += v;
        }
        for pos in range {
            values[pos] /= sum;
        }
    }
    SparseOperator::new(pattern.clone(), values)
}

pub fn random_field(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> NodeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NodeField::from_array(Array2::from_shape_fn((n, d), |_| rng.gen_range(lo..hi)))
}

/// Least-squares slope of log(err) against log(tau).
pub fn fit_loglog_slope(taus: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
