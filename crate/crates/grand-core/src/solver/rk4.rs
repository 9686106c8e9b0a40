//! Classical fourth-order Runge-Kutta.

use crate::dynamics::Dynamics;
use crate::error::Result;
use crate::field::NodeField;
use crate::solver::{amplitude_limit, check_state, plan_steps, Integrator, SchemeConfig, Solution, SolverTrace};

/// One RK4 step. Returns the new state and `k1 = f(x, t)`, which multistep
/// bootstraps reuse as the derivative history at `x`.
pub fn rk4_step(
    dynamics: &dyn Dynamics,
    x: &NodeField,
    t: f64,
    tau: f64,
) -> Result<(NodeField, NodeField)> {
    let k1 = dynamics.eval(x, t)?;
    let k2 = dynamics.eval(&x.axpy(tau / 2.0, &k1), t + tau / 2.0)?;
    let k3 = dynamics.eval(&x.axpy(tau / 2.0, &k2), t + tau / 2.0)?;
    let k4 = dynamics.eval(&x.axpy(tau, &k3), t + tau)?;

    let mut sum = k1.clone();
    sum.axpy_inplace(2.0, &k2);
    sum.axpy_inplace(2.0, &k3);
    sum.axpy_inplace(1.0, &k4);
    Ok((x.axpy(tau / 6.0, &sum), k1))
}

pub struct Rk4;

impl Integrator for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
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
            let (next, _) = rk4_step(dynamics, &x, t, tau)?;
            x = next;
            check_state(&x, t_next, limit)?;
            t = t_next;
            trace.push(t, tau, None, &x, dynamics.eval_count());
        }
        Ok(Solution { state: x, trace })
    }
}
