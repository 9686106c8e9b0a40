//! Fourth-order Adams methods: the explicit Bashforth step, and the Moulton
//! corrector driven as a predictor-corrector loop.
//!
//! History starts with three RK4 steps (their `k1` evaluations provide the
//! derivative record). A clipped final step breaks the uniform spacing the
//! Adams coefficients assume, so that one step is taken with RK4 instead.

use std::collections::VecDeque;

use crate::dynamics::Dynamics;
use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::solver::rk4::rk4_step;
use crate::solver::{amplitude_limit, check_state, plan_steps, Integrator, SchemeConfig, Solution, SolverTrace};

/// Bashforth-4 weights for `f_k, f_{k-1}, f_{k-2}, f_{k-3}`, over 24.
pub const AB4_COEFFS: [f64; 4] = [55.0, -59.0, 37.0, -9.0];
/// Moulton-4 weights for `f(x'), f_k, f_{k-1}, f_{k-2}`, over 24.
pub const AM4_COEFFS: [f64; 4] = [9.0, 19.0, -5.0, 1.0];

/// Explicit Adams-Bashforth step of order 4. `history` holds the last four
/// derivative evaluations, most recent last: `[f_{k-3}, f_{k-2}, f_{k-1}, f_k]`.
pub fn ab4_step(history: &[NodeField], x: &NodeField, tau: f64) -> Result<NodeField> {
    if history.len() < 4 {
        return Err(GrandError::UnsupportedConfig(format!(
            "multistep update needs 4 derivative evaluations, have {}",
            history.len()
        )));
    }
    let h = &history[history.len() - 4..];
    let mut out = x.clone();
    out.axpy_inplace(tau * AB4_COEFFS[0] / 24.0, &h[3]);
    out.axpy_inplace(tau * AB4_COEFFS[1] / 24.0, &h[2]);
    out.axpy_inplace(tau * AB4_COEFFS[2] / 24.0, &h[1]);
    out.axpy_inplace(tau * AB4_COEFFS[3] / 24.0, &h[0]);
    Ok(out)
}

/// Predictor-corrector step: Bashforth prediction, then Moulton corrections
/// until the inf-norm change drops below `cfg.pc_threshold`. Returns the new
/// state and the number of corrector iterations.
pub fn am4_pc_step(
    dynamics: &dyn Dynamics,
    history: &[NodeField],
    x: &NodeField,
    t_next: f64,
    tau: f64,
    cfg: &SchemeConfig,
) -> Result<(NodeField, usize)> {
    let predicted = ab4_step(history, x, tau)?;
    let h = &history[history.len() - 3..];

    // fixed part: x + tau * (19 f_k - 5 f_{k-1} + f_{k-2}) / 24
    let mut base = x.clone();
    base.axpy_inplace(tau * AM4_COEFFS[1] / 24.0, &h[2]);
    base.axpy_inplace(tau * AM4_COEFFS[2] / 24.0, &h[1]);
    base.axpy_inplace(tau * AM4_COEFFS[3] / 24.0, &h[0]);

    let mut current = predicted;
    let mut delta = f64::INFINITY;
    for iter in 1..=cfg.pc_max_iters {
        let f_new = dynamics.eval(&current, t_next)?;
        let next = base.axpy(tau * AM4_COEFFS[0] / 24.0, &f_new);
        delta = next.inf_dist(&current);
        current = next;
        if delta <= cfg.pc_threshold {
            return Ok((current, iter));
        }
    }
    Err(GrandError::CorrectorStalled { iters: cfg.pc_max_iters, delta })
}

enum AdamsFlavor {
    Bashforth,
    MoultonPc,
}

fn integrate_adams(
    flavor: AdamsFlavor,
    name: &'static str,
    dynamics: &dyn Dynamics,
    x0: &NodeField,
    cfg: &SchemeConfig,
) -> Result<Solution> {
    let mut trace = SolverTrace::start(name, x0);
    let limit = amplitude_limit(x0);
    let plan = plan_steps(cfg.t_end, cfg.tau);
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut history: VecDeque<NodeField> = VecDeque::with_capacity(4);

    for (step_idx, &(t_next, tau)) in plan.iter().enumerate() {
        let uniform = (tau - cfg.tau).abs() <= 1e-9 * cfg.tau;
        if step_idx < 3 || !uniform {
            // bootstrap (and any clipped step) via RK4
            let (next, k1) = rk4_step(dynamics, &x, t, tau)?;
            if uniform {
                history.push_back(k1);
                if history.len() > 4 {
                    history.pop_front();
                }
            } else {
                history.clear();
            }
            x = next;
        } else {
            history.push_back(dynamics.eval(&x, t)?);
            if history.len() > 4 {
                history.pop_front();
            }
            let hist: Vec<NodeField> = history.iter().cloned().collect();
            x = match flavor {
                AdamsFlavor::Bashforth => ab4_step(&hist, &x, tau)?,
                AdamsFlavor::MoultonPc => am4_pc_step(dynamics, &hist, &x, t_next, tau, cfg)?.0,
            };
        }
        check_state(&x, t_next, limit)?;
        t = t_next;
        trace.push(t, tau, None, &x, dynamics.eval_count());
    }
    Ok(Solution { state: x, trace })
}

pub struct Ab4;

impl Integrator for Ab4 {
    fn name(&self) -> &'static str {
        "ab4"
    }

    fn integrate(&self, dynamics: &dyn Dynamics, x0: &NodeField, cfg: &SchemeConfig) -> Result<Solution> {
        integrate_adams(AdamsFlavor::Bashforth, self.name(), dynamics, x0, cfg)
    }
}

pub struct Am4Pc;

impl Integrator for Am4Pc {
    fn name(&self) -> &'static str {
        "am4-pc"
    }

    fn integrate(&self, dynamics: &dyn Dynamics, x0: &NodeField, cfg: &SchemeConfig) -> Result<Solution> {
        integrate_adams(AdamsFlavor::MoultonPc, self.name(), dynamics, x0, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnDynamics;
    use crate::solver::SchemeKind;
    use ndarray::array;

    fn field(v: f64) -> NodeField {
        NodeField::new(array![[v]]).unwrap()
    }

    #[test]
    fn zero_dynamics_identity() {
        let hist = vec![field(0.0), field(0.0), field(0.0), field(0.0)];
        let x = field(2.0);
        let x1 = ab4_step(&hist, &x, 0.5).unwrap();
        assert_eq!(x1.values()[(0, 0)], 2.0);
    }

    #[test]
    fn constant_dynamics_exact() {
        // coefficients sum to 24/24, so f = c advances by tau * c
        let c = 3.0;
        let hist = vec![field(c), field(c), field(c), field(c)];
        let x = field(1.0);
        let x1 = ab4_step(&hist, &x, 0.25).unwrap();
        assert!((x1.values()[(0, 0)] - 1.75).abs() < 1e-14);
    }

    #[test]
    fn insufficient_history_errors() {
        let hist = vec![field(0.0); 3];
        assert!(ab4_step(&hist, &field(1.0), 0.1).is_err());
    }

    #[test]
    fn corrector_zero_dynamics_one_pass() {
        let dynamics = FnDynamics::new(|x: &NodeField, _| NodeField::zeros(x.n(), x.channels()));
        let hist = vec![field(0.0); 4];
        let cfg = SchemeConfig::with(SchemeKind::Am4Pc, 0.5, 1.0);
        let (x1, iters) = am4_pc_step(&dynamics, &hist, &field(4.0), 0.5, 0.5, &cfg).unwrap();
        assert_eq!(iters, 1);
        assert_eq!(x1.values()[(0, 0)], 4.0);
    }

    #[test]
    fn corrector_fixed_point_matches_algebraic_solve() {
        // x' = -x, tau = 0.5, exact history at t = 0, 0.5, 1.0; the corrector
        // fixed point solves x1 = base - tau * 9/24 * x1.
        let tau = 0.5;
        let dynamics = FnDynamics::new(|x: &NodeField, _| x.scale(-1.0));
        let states: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|t: &f64| (-t).exp()).collect();
        let hist: Vec<NodeField> = states.iter().map(|&s| field(-s)).collect();
        let x = field(states[2]);

        let base = states[2]
            + tau * (AM4_COEFFS[1] * -states[2] + AM4_COEFFS[2] * -states[1] + AM4_COEFFS[3] * -states[0]) / 24.0;
        let fixed_point = base / (1.0 + tau * AM4_COEFFS[0] / 24.0);

        // need 4 history entries for the predictor; prepend t = -0.5
        let mut full_hist = vec![field(-(0.5f64).exp())];
        full_hist.extend(hist);
        let mut cfg = SchemeConfig::with(SchemeKind::Am4Pc, tau, 1.5);
        cfg.pc_threshold = 1e-14;
        let (x1, _) = am4_pc_step(&dynamics, &full_hist, &x, 1.5, tau, &cfg).unwrap();
        assert!((x1.values()[(0, 0)] - fixed_point).abs() < 1e-12);
    }

    #[test]
    fn corrector_stall_reports_delta() {
        // amplify hard enough that the corrector map is non-contractive
        let dynamics = FnDynamics::new(|x: &NodeField, _| x.scale(30.0));
        let hist = vec![field(1.0); 4];
        let mut cfg = SchemeConfig::with(SchemeKind::Am4Pc, 1.0, 1.0);
        cfg.pc_max_iters = 5;
        let err = am4_pc_step(&dynamics, &hist, &field(1.0), 1.0, 1.0, &cfg).unwrap_err();
        match err {
            GrandError::CorrectorStalled { iters, delta } => {
                assert_eq!(iters, 5);
                assert!(delta > 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
