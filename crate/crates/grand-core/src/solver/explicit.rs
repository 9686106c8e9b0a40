//! Forward Euler: `X' = (I + tau * (A - I)) X`.

use std::sync::Arc;

use crate::dynamics::Dynamics;
use crate::error::Result;
use crate::field::NodeField;
use crate::solver::{amplitude_limit, check_state, plan_steps, Integrator, SchemeConfig, Solution, SolverTrace};
use crate::sparse::SparseOperator;

/// One forward Euler step.
pub fn explicit_euler_step(
    dynamics: &dyn Dynamics,
    x: &NodeField,
    t: f64,
    tau: f64,
) -> Result<NodeField> {
    let f = dynamics.eval(x, t)?;
    Ok(x.axpy(tau, &f))
}

/// Materializes the one-step operator `Q = I + tau * (A - I)`. Rows sum to 1
/// exactly when `A` is row-stochastic; entries are nonnegative iff
/// `tau <= 1 / (1 - min_i a_ii)`.
pub fn step_operator(attention: &SparseOperator, tau: f64) -> SparseOperator {
    let (pattern, remap) = attention.pattern().with_diagonal();
    let pattern = Arc::new(pattern);
    let mut q = SparseOperator::zeros(pattern.clone());
    for (pos, &a) in attention.values().iter().enumerate() {
        q.values_mut()[remap[pos]] = tau * a;
    }
    for i in 0..pattern.n {
        let diag = pattern.find(i, i).expect("diagonal present");
        let shift = if attention.pattern().row_is_empty(i) { 0.0 } else { tau };
        q.values_mut()[diag] += 1.0 - shift;
    }
    q
}

pub struct ExplicitEuler;

impl Integrator for ExplicitEuler {
    fn name(&self) -> &'static str {
        "explicit-euler"
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
        let mut t = 0.0;
        for (t_next, tau) in plan_steps(cfg.t_end, cfg.tau) {
            x = explicit_euler_step(dynamics, &x, t, tau)?;
            check_state(&x, t_next, limit)?;
            t = t_next;
            trace.push(t, tau, None, &x, dynamics.eval_count());
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
    use crate::sparse::CsrPattern;
    use ndarray::array;
    use std::sync::Arc;

    fn path2() -> SparseOperator {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        uniform_attention(&Arc::new(CsrPattern::from_graph(&g)))
    }

    #[test]
    fn path_graph_half_step() {
        // uniform A on 1-2, X = (1, 0), tau = 0.5: X' = (0.5, 0.5)
        let dynamics = LinearDynamics::new(path2());
        let x = NodeField::new(array![[1.0], [0.0]]).unwrap();
        let x1 = explicit_euler_step(&dynamics, &x, 0.0, 0.5).unwrap();
        assert!((x1.values()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((x1.values()[(1, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_field_is_fixed_point() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let a = uniform_attention(&Arc::new(CsrPattern::from_graph(&g)));
        let dynamics = LinearDynamics::new(a);
        let x = NodeField::new(array![[2.5], [2.5], [2.5], [2.5]]).unwrap();
        let x1 = explicit_euler_step(&dynamics, &x, 0.0, 0.7).unwrap();
        assert_eq!(x1.values(), x.values());
    }

    #[test]
    fn step_operator_rows_sum_to_one() {
        let q = step_operator(&path2(), 0.5);
        for s in q.row_sums() {
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!((q.entry(0, 0) - 0.5).abs() < 1e-15);
        assert!((q.entry(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_step_count() {
        let dynamics = LinearDynamics::new(path2());
        let x = NodeField::new(array![[1.0], [0.0]]).unwrap();
        let cfg = SchemeConfig::with(crate::solver::SchemeKind::ExplicitEuler, 1.0, 3.0);
        let sol = ExplicitEuler.integrate(&dynamics, &x, &cfg).unwrap();
        assert_eq!(sol.trace.accepted_steps(), 3);
        assert_eq!(sol.trace.final_t(), 3.0);
    }
}
