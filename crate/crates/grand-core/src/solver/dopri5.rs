//! Dormand-Prince 5(4) with componentwise error control.
//!
//! The embedded pair shares stages (FSAL), so estimating the error costs
//! nothing beyond the fifth-order step. A step is accepted when every
//! component satisfies `|e_i| <= atol + rtol * max(|x0_i|, |x1_i|)`, the two
//! iterates being the current and candidate states.

use crate::dynamics::Dynamics;
use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::solver::{amplitude_limit, check_state, Integrator, SchemeConfig, Solution, SolverTrace};

const STAGES: usize = 7;

const C: [f64; STAGES] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

/// Fifth-order solution weights.
const B5: [f64; STAGES] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// `b - b*`: weights of the local error estimate.
const E: [f64; STAGES] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const SHRINK_FLOOR: f64 = 0.2;
const GROWTH_CAP: f64 = 5.0;
const MAX_STEPS: usize = 10_000_000;

/// Integrates to `cfg.t_end`, clipping the last step so the final state sits
/// at exactly `T`. Errors with a stiffness diagnosis if the controller
/// drives the step below `1e-12 * T`.
pub fn dopri5_integrate(
    dynamics: &dyn Dynamics,
    x0: &NodeField,
    cfg: &SchemeConfig,
) -> Result<Solution> {
    let t_end = cfg.t_end;
    let mut trace = SolverTrace::start("dopri5", x0);
    let limit = amplitude_limit(x0);

    let mut x = x0.clone();
    let mut t = 0.0;
    let mut tau = cfg.tau.min(t_end).max(t_end * 1e-6);
    let mut k1 = dynamics.eval(&x, t)?;

    for _ in 0..MAX_STEPS {
        if t >= t_end {
            return Ok(Solution { state: x, trace });
        }
        let mut clipped = false;
        if t + tau >= t_end {
            tau = t_end - t;
            clipped = true;
        }
        if tau < 1e-12 * t_end {
            return Err(GrandError::StepSizeUnderflow { t, tau });
        }

        // stages; k[0] comes from FSAL
        let mut k: Vec<NodeField> = Vec::with_capacity(STAGES);
        k.push(k1.clone());
        for s in 1..STAGES {
            let mut arg = x.clone();
            for (j, kj) in k.iter().enumerate() {
                let w = A[s][j];
                if w != 0.0 {
                    arg.axpy_inplace(tau * w, kj);
                }
            }
            k.push(dynamics.eval(&arg, t + C[s] * tau)?);
        }

        let mut candidate = x.clone();
        for (s, ks) in k.iter().enumerate() {
            if B5[s] != 0.0 {
                candidate.axpy_inplace(tau * B5[s], ks);
            }
        }

        // componentwise error against the tolerance envelope
        let mut err_inf = 0.0f64;
        let mut ratio = 0.0f64;
        {
            let xv = x.values();
            let cv = candidate.values();
            let mut err = ndarray::Array2::<f64>::zeros(xv.raw_dim());
            for (s, ks) in k.iter().enumerate() {
                if E[s] != 0.0 {
                    err.scaled_add(tau * E[s], ks.values());
                }
            }
            for ((e, x0v), x1v) in err.iter().zip(xv.iter()).zip(cv.iter()) {
                let etol = cfg.atol + cfg.rtol * x0v.abs().max(x1v.abs());
                err_inf = err_inf.max(e.abs());
                ratio = ratio.max(e.abs() / etol);
            }
        }

        let factor = if ratio > 0.0 {
            (SAFETY * ratio.powf(-0.2)).clamp(SHRINK_FLOOR, GROWTH_CAP)
        } else {
            GROWTH_CAP
        };

        if ratio <= 1.0 {
            let t_new = if clipped { t_end } else { t + tau };
            check_state(&candidate, t_new, limit)?;
            x = candidate;
            t = t_new;
            k1 = k.pop().expect("last stage is FSAL");
            trace.push(t, tau, Some(err_inf), &x, dynamics.eval_count());
        }
        tau *= factor;
    }
    Err(GrandError::StepSizeUnderflow { t, tau })
}

pub struct Dopri5;

impl Integrator for Dopri5 {
    fn name(&self) -> &'static str {
        "dopri5"
    }

    fn integrate(&self, dynamics: &dyn Dynamics, x0: &NodeField, cfg: &SchemeConfig) -> Result<Solution> {
        dopri5_integrate(dynamics, x0, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnDynamics;
    use crate::solver::SchemeKind;
    use ndarray::array;

    #[test]
    fn zero_dynamics_exact() {
        let dynamics = FnDynamics::new(|x: &NodeField, _| NodeField::zeros(x.n(), x.channels()));
        let x = NodeField::new(array![[1.5], [-2.0]]).unwrap();
        let cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.5, 3.0);
        let sol = dopri5_integrate(&dynamics, &x, &cfg).unwrap();
        assert_eq!(sol.state.values(), x.values());
        assert_eq!(sol.trace.final_t(), 3.0);
        assert!(sol.trace.accepted_steps() <= 4);
    }

    #[test]
    fn scalar_exponential_accuracy() {
        let dynamics = FnDynamics::new(|x: &NodeField, _| x.scale(-1.0));
        let x = NodeField::new(array![[1.0]]).unwrap();
        let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.1, 2.0);
        cfg.atol = 1e-10;
        cfg.rtol = 1e-8;
        let sol = dopri5_integrate(&dynamics, &x, &cfg).unwrap();
        assert!((sol.state.values()[(0, 0)] - (-2.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn tightening_tolerance_reduces_error() {
        let dynamics = FnDynamics::new(|x: &NodeField, _| x.scale(-0.7));
        let x = NodeField::new(array![[1.0]]).unwrap();
        let exact = (-0.7f64 * 4.0).exp();
        let mut errs = Vec::new();
        for rtol in [1e-4, 1e-6, 1e-8] {
            let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.5, 4.0);
            cfg.atol = 1e-12;
            cfg.rtol = rtol;
            let sol = dopri5_integrate(&dynamics, &x, &cfg).unwrap();
            errs.push((sol.state.values()[(0, 0)] - exact).abs());
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0]);
    }
}
