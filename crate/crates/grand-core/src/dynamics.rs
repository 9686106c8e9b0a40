//! The right-hand side `dX/dt` supplied to the integrators.
//!
//! Two production flavors: a frozen linear operator (attention evaluated
//! once) and a state-dependent one that rebuilds attention at every
//! evaluation. Tests wrap arbitrary closures.

use std::cell::Cell;
use std::sync::Arc;

use crate::attention::{apply_shifted, build_attention, AttentionParams};
use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::sparse::{CsrPattern, SparseOperator};

pub trait Dynamics: Sync {
    /// Evaluates `dX/dt` at state `x`, time `t`.
    fn eval(&self, x: &NodeField, t: f64) -> Result<NodeField>;

    /// Row-stochastic attention operator at state `x`, for schemes that form
    /// per-step matrices (implicit solves, stability reports).
    fn attention_at(&self, x: &NodeField) -> Result<SparseOperator> {
        let _ = x;
        Err(GrandError::UnsupportedConfig(
            "dynamics does not expose an attention operator".into(),
        ))
    }

    /// The frozen attention operator, when the dynamics is linear.
    fn frozen_attention(&self) -> Option<&SparseOperator> {
        None
    }

    fn eval_count(&self) -> usize {
        0
    }
}

/// Linear dynamics `dX/dt = (A - I) X` with `A` fixed.
pub struct LinearDynamics {
    attention: SparseOperator,
    evals: Cell<usize>,
}

// Cell counter is only touched behind &self in single-threaded stepping loops.
unsafe impl Sync for LinearDynamics {}

impl LinearDynamics {
    pub fn new(attention: SparseOperator) -> Self {
        Self { attention, evals: Cell::new(0) }
    }

    pub fn attention(&self) -> &SparseOperator {
        &self.attention
    }
}

impl Dynamics for LinearDynamics {
    fn eval(&self, x: &NodeField, _t: f64) -> Result<NodeField> {
        self.evals.set(self.evals.get() + 1);
        Ok(apply_shifted(&self.attention, x))
    }

    fn attention_at(&self, _x: &NodeField) -> Result<SparseOperator> {
        Ok(self.attention.clone())
    }

    fn frozen_attention(&self) -> Option<&SparseOperator> {
        Some(&self.attention)
    }

    fn eval_count(&self) -> usize {
        self.evals.get()
    }
}

/// Nonlinear dynamics: attention is rebuilt from the current state at every
/// evaluation.
pub struct AttentionDynamics {
    params: AttentionParams,
    pattern: Arc<CsrPattern>,
    evals: Cell<usize>,
}

unsafe impl Sync for AttentionDynamics {}

impl AttentionDynamics {
    pub fn new(params: AttentionParams, pattern: Arc<CsrPattern>) -> Self {
        Self { params, pattern, evals: Cell::new(0) }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }
}

impl Dynamics for AttentionDynamics {
    fn eval(&self, x: &NodeField, _t: f64) -> Result<NodeField> {
        self.evals.set(self.evals.get() + 1);
        let a = build_attention(&self.params, x, &self.pattern)?;
        Ok(apply_shifted(&a, x))
    }

    fn attention_at(&self, x: &NodeField) -> Result<SparseOperator> {
        build_attention(&self.params, x, &self.pattern)
    }

    fn eval_count(&self) -> usize {
        self.evals.get()
    }
}

/// Closure-backed dynamics for tests and scalar oracles.
pub struct FnDynamics<F: Fn(&NodeField, f64) -> NodeField + Sync> {
    f: F,
    evals: Cell<usize>,
}

unsafe impl<F: Fn(&NodeField, f64) -> NodeField + Sync> Sync for FnDynamics<F> {}

impl<F: Fn(&NodeField, f64) -> NodeField + Sync> FnDynamics<F> {
    pub fn new(f: F) -> Self {
        Self { f, evals: Cell::new(0) }
    }
}

impl<F: Fn(&NodeField, f64) -> NodeField + Sync> Dynamics for FnDynamics<F> {
    fn eval(&self, x: &NodeField, t: f64) -> Result<NodeField> {
        self.evals.set(self.evals.get() + 1);
        Ok((self.f)(x, t))
    }

    fn eval_count(&self) -> usize {
        self.evals.get()
    }
}
