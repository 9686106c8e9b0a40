//! Analytic solution of the frozen linear system: `X(T) = exp(T (A - I)) X0`.
//!
//! The matrix exponential uses Pade-13 with scaling and squaring. Dense work
//! is gated by `cfg.expm_dense_limit`; above it the scheme falls back to a
//! tight-tolerance dopri5 run on the same frozen operator when allowed.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::attention::shift_operator;
use crate::dynamics::Dynamics;
use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::solver::dopri5::dopri5_integrate;
use crate::solver::{Integrator, SchemeConfig, SchemeKind, Solution, SolverTrace};
use crate::sparse::SparseOperator;

/// Pade-13 numerator coefficients.
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense matrix exponential, scaling-and-squaring with a Pade-13 kernel.
pub fn expm_dense(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "exponential of a square matrix");
    if n == 0 {
        return m.clone();
    }

    let norm = one_norm(m);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m / 2f64.powi(s);

    let eye = DMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (B13[13] * &a6 + B13[11] * &a4 + B13[9] * &a2)
        + B13[7] * &a6
        + B13[5] * &a4
        + B13[3] * &a2
        + B13[1] * &eye;
    let u = &a * u_inner;
    let v = &a6 * (B13[12] * &a6 + B13[10] * &a4 + B13[8] * &a2)
        + B13[6] * &a6
        + B13[4] * &a4
        + B13[2] * &a2
        + B13[0] * &eye;

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut f = lhs
        .lu()
        .solve(&rhs)
        .expect("Pade denominator is nonsingular for scaled input");
    for _ in 0..s {
        f = &f * &f;
    }
    f
}

/// Applies `exp(T * shifted)` to `x0` densely. `shifted` is the materialized
/// `A - I` operator of a frozen diffusivity.
pub fn expm_solve(shifted: &SparseOperator, x0: &NodeField, t_end: f64) -> Result<NodeField> {
    x0.check_rows(shifted.n(), "analytic solve")?;
    let dense = shifted.to_dense() * t_end;
    let propagator = expm_dense(&dense);

    let n = x0.n();
    let d = x0.channels();
    let xv = x0.values();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for c in 0..d {
            let mut acc = 0.0;
            for j in 0..n {
                acc += propagator[(i, j)] * xv[(j, c)];
            }
            out[(i, c)] = acc;
        }
    }
    Ok(NodeField::from_array(out))
}

pub struct Expm;

impl Integrator for Expm {
    fn name(&self) -> &'static str {
        "expm"
    }

    fn integrate(&self, dynamics: &dyn Dynamics, x0: &NodeField, cfg: &SchemeConfig) -> Result<Solution> {
        let attention = dynamics.frozen_attention().ok_or_else(|| {
            GrandError::UnsupportedConfig(
                "analytic scheme needs a frozen diffusivity; use the linear variant".into(),
            )
        })?;
        if attention.n() > cfg.expm_dense_limit {
            if !cfg.expm_fallback {
                return Err(GrandError::DenseLimitExceeded {
                    n: attention.n(),
                    limit: cfg.expm_dense_limit,
                });
            }
            let mut fallback = cfg.clone();
            fallback.scheme = SchemeKind::Dopri5;
            fallback.atol = cfg.atol.min(1e-10);
            fallback.rtol = cfg.rtol.min(1e-8);
            return dopri5_integrate(dynamics, x0, &fallback);
        }

        let state = expm_solve(&shift_operator(attention), x0, cfg.t_end)?;
        let mut trace = SolverTrace::start(self.name(), x0);
        trace.push(cfg.t_end, cfg.t_end, None, &state, 0);
        Ok(Solution { state, trace })
    }
}
