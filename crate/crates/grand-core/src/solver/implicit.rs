//! Backward Euler: solve `(I - tau * (A - I)) X' = X` by Jacobi iteration.
//!
//! The system matrix `B` is strictly diagonally dominant for every `tau > 0`
//! when `A` is row-stochastic with nonnegative diagonal, which guarantees
//! Jacobi convergence. `B` is nonsymmetric in general, so no CG here.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use crate::dynamics::Dynamics;
use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::solver::{amplitude_limit, check_state, plan_steps, Integrator, SchemeConfig, Solution, SolverTrace};
use crate::sparse::SparseOperator;

/// Materializes `B = I - tau * (A - I)`; zero rows of `A` become identity
/// rows of `B`.
pub fn implicit_operator(attention: &SparseOperator, tau: f64) -> SparseOperator {
    let (pattern, remap) = attention.pattern().with_diagonal();
    let pattern = Arc::new(pattern);
    let mut b = SparseOperator::zeros(pattern.clone());
    for (pos, &a) in attention.values().iter().enumerate() {
        b.values_mut()[remap[pos]] = -tau * a;
    }
    for i in 0..pattern.n {
        let diag = pattern.find(i, i).expect("diagonal present");
        let shift = if attention.pattern().row_is_empty(i) { 0.0 } else { tau };
        b.values_mut()[diag] += 1.0 + shift;
    }
    b
}

/// Jacobi iteration for `B x = rhs` with `B = I - tau * (A - I)` kept in
/// factored form. Returns the solution and the number of sweeps.
pub fn jacobi_solve(
    attention: &SparseOperator,
    tau: f64,
    rhs: &NodeField,
    tol: f64,
    max_iters: usize,
) -> Result<(NodeField, usize)> {
    let n = attention.n();
    let d = rhs.channels();
    let pattern = attention.pattern();

    // diagonal of B and the off-diagonal part of A per row
    let mut diag = vec![1.0; n];
    for i in 0..n {
        if !pattern.row_is_empty(i) {
            let a_ii = pattern.find(i, i).map_or(0.0, |p| attention.values()[p]);
            diag[i] = 1.0 + tau * (1.0 - a_ii);
        }
    }

    let mut x = rhs.values().clone();
    let rv = rhs.values();
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_iters {
        let mut next = Array2::zeros((n, d));
        next.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for c in 0..d {
                    row[c] = rv[(i, c)];
                }
                for pos in pattern.row_range(i) {
                    let j = pattern.col_indices[pos];
                    if j == i {
                        continue;
                    }
                    let a = tau * attention.values()[pos];
                    for c in 0..d {
                        row[c] += a * x[(j, c)];
                    }
                }
                let inv = 1.0 / diag[i];
                for c in 0..d {
                    row[c] *= inv;
                }
            });
        x = next;

        // residual inf-norm of B x - rhs
        residual = 0.0f64;
        let ax = attention.matvec(&NodeField::from_array(x.clone()));
        let axv = ax.values();
        for i in 0..n {
            let empty = pattern.row_is_empty(i);
            for c in 0..d {
                let bx = if empty {
                    x[(i, c)]
                } else {
                    x[(i, c)] - tau * (axv[(i, c)] - x[(i, c)])
                };
                residual = residual.max((bx - rv[(i, c)]).abs());
            }
        }
        if residual <= tol {
            return Ok((NodeField::from_array(x), sweep));
        }
    }
    Err(GrandError::SolverDiverged { iters: max_iters, residual, tol })
}

/// One backward Euler step; attention is taken at the current state
/// (semi-implicit when the dynamics is nonlinear).
pub fn implicit_euler_step(
    dynamics: &dyn Dynamics,
    x: &NodeField,
    tau: f64,
    cfg: &SchemeConfig,
) -> Result<(NodeField, usize)> {
    let attention = dynamics.attention_at(x)?;
    let max_iters = cfg.jacobi_max_iters.unwrap_or(10 * attention.n().max(1));
    jacobi_solve(&attention, tau, x, cfg.jacobi_tol, max_iters)
}

pub struct ImplicitEuler;

impl Integrator for ImplicitEuler {
    fn name(&self) -> &'static str {
        "implicit-euler"
    }

    fn integrate(
        &self,
        dynamics: &dyn Dynamics,
        x0: &NodeField,
        cfg: &SchemeConfig,
    ) -> Result<Solution> {
        let mut trace = SolverTrace::start(self.name(), x0);
        let limit = amplitude_limit(x0);
        let mut x = x0.clone();
        let mut fevals = 0;
        for (t_next, tau) in plan_steps(cfg.t_end, cfg.tau) {
            let (next, sweeps) = implicit_euler_step(dynamics, &x, tau, cfg)?;
            x = next;
            fevals += sweeps + 1;
            check_state(&x, t_next, limit)?;
            trace.push(t_next, tau, None, &x, fevals);
        }
        Ok(Solution { state: x, trace })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::uniform_attention;
    use crate::dynamics::LinearDynamics;
    use crate::graph::Graph;
    use crate::solver::SchemeKind;
    use crate::sparse::CsrPattern;
    use ndarray::array;
    use std::sync::Arc;

    fn path2() -> SparseOperator {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        uniform_attention(&Arc::new(CsrPattern::from_graph(&g)))
    }

    #[test]
    fn constant_field_is_fixed_point() {
        let dynamics = LinearDynamics::new(path2());
        let x = NodeField::new(array![[3.0], [3.0]]).unwrap();
        let cfg = SchemeConfig::with(SchemeKind::ImplicitEuler, 2.0, 2.0);
        let (x1, _) = implicit_euler_step(&dynamics, &x, 2.0, &cfg).unwrap();
        assert!(x1.inf_dist(&x) <= 1e-9);
    }

    #[test]
    fn dense_2x2_solve_oracle() {
        // tau = 1 on the 2-path: B = [[2,-1],[-1,2]], X = (1,0) -> (2/3, 1/3)
        let dynamics = LinearDynamics::new(path2());
        let x = NodeField::new(array![[1.0], [0.0]]).unwrap();
        let mut cfg = SchemeConfig::with(SchemeKind::ImplicitEuler, 1.0, 1.0);
        cfg.jacobi_tol = 1e-13;
        cfg.jacobi_max_iters = Some(200);
        let (x1, _) = implicit_euler_step(&dynamics, &x, 1.0, &cfg).unwrap();
        assert!((x1.values()[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((x1.values()[(1, 0)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn implicit_operator_entries() {
        let b = implicit_operator(&path2(), 1.0);
        assert!((b.entry(0, 0) - 2.0).abs() < 1e-15);
        assert!((b.entry(0, 1) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn max_iters_exceeded_reports_residual() {
        let dynamics = LinearDynamics::new(path2());
        let x = NodeField::new(array![[1.0], [0.0]]).unwrap();
        let a = dynamics.attention_at(&x).unwrap();
        let err = jacobi_solve(&a, 100.0, &x, 1e-14, 2).unwrap_err();
        match err {
            GrandError::SolverDiverged { iters, residual, .. } => {
                assert_eq!(iters, 2);
                assert!(residual.is_finite());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
