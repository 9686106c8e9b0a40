//! Temporal discretisations of `dX/dt = (A(X) - I) X`.
//!
//! Every scheme implements [`Integrator`] and is registered by name; callers
//! pick one at runtime through [`SchemeConfig`]. Fixed-step schemes take
//! `ceil(T / tau)` steps with the final step clipped so the trajectory lands
//! on `T` exactly.

mod adams;
mod dopri5;
mod expm;
mod explicit;
mod implicit;
mod rk4;

pub use adams::{ab4_step, am4_pc_step, Ab4, Am4Pc, AB4_COEFFS, AM4_COEFFS};
pub use dopri5::{dopri5_integrate, Dopri5};
pub use expm::{expm_dense, expm_solve, Expm};
pub use explicit::{explicit_euler_step, step_operator, ExplicitEuler};
pub use implicit::{implicit_euler_step, implicit_operator, jacobi_solve, ImplicitEuler};
pub use rk4::{rk4_step, Rk4};

use std::sync::OnceLock;

use crate::dynamics::Dynamics;
use crate::error::{GrandError, Result};
use crate::field::NodeField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    ExplicitEuler,
    ImplicitEuler,
    Rk4,
    Ab4,
    Am4Pc,
    Dopri5,
    Expm,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::ExplicitEuler => "explicit-euler",
            SchemeKind::ImplicitEuler => "implicit-euler",
            SchemeKind::Rk4 => "rk4",
            SchemeKind::Ab4 => "ab4",
            SchemeKind::Am4Pc => "am4-pc",
            SchemeKind::Dopri5 => "dopri5",
            SchemeKind::Expm => "expm",
        }
    }

    pub fn all() -> &'static [SchemeKind] {
        &[
            SchemeKind::ExplicitEuler,
            SchemeKind::ImplicitEuler,
            SchemeKind::Rk4,
            SchemeKind::Ab4,
            SchemeKind::Am4Pc,
            SchemeKind::Dopri5,
            SchemeKind::Expm,
        ]
    }

    /// Fixed-step explicit schemes support exact reverse-mode gradients.
    pub fn supports_gradients(self) -> bool {
        matches!(self, SchemeKind::ExplicitEuler | SchemeKind::Rk4 | SchemeKind::Ab4)
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = GrandError;
    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::all()
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GrandError::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

/// Full temporal-discretisation configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SchemeConfig {
    pub scheme: SchemeKind,
    /// Step size for fixed-step schemes; initial step guess for dopri5.
    pub tau: f64,
    /// Integration horizon.
    pub t_end: f64,
    pub atol: f64,
    pub rtol: f64,
    /// Corrector stopping threshold (inf-norm change between iterates).
    pub pc_threshold: f64,
    pub pc_max_iters: usize,
    pub jacobi_tol: f64,
    /// `None` selects `10 * n` at solve time.
    pub jacobi_max_iters: Option<usize>,
    /// Re-evaluate attention along the trajectory instead of freezing it.
    pub nonlinear: bool,
    /// Dense-solve threshold for the analytic scheme.
    pub expm_dense_limit: usize,
    /// Fall back to dopri5 on the frozen operator above the dense limit.
    pub expm_fallback: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::Dopri5,
            tau: 0.1,
            t_end: 1.0,
            atol: 1e-12,
            rtol: 1e-6,
            pc_threshold: 1e-9,
            pc_max_iters: 100,
            jacobi_tol: 1e-10,
            jacobi_max_iters: None,
            nonlinear: false,
            expm_dense_limit: 512,
            expm_fallback: true,
        }
    }
}

impl SchemeConfig {
    pub fn with(scheme: SchemeKind, tau: f64, t_end: f64) -> Self {
        Self { scheme, tau, t_end, ..Default::default() }
    }

    /// Maps the single tolerance-scale knob to `(atol, rtol) =
    /// (ts * 1e-12, ts * 1e-6)`.
    pub fn with_tolerance_scale(mut self, ts: f64) -> Self {
        self.atol = ts * 1e-12;
        self.rtol = ts * 1e-6;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(GrandError::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(GrandError::InvalidConfig(format!(
                "horizon must be nonnegative, got {}",
                self.t_end
            )));
        }
        if !(self.atol > 0.0 && self.rtol > 0.0) {
            return Err(GrandError::InvalidConfig("tolerances must be positive".into()));
        }
        if self.pc_threshold <= 0.0 || self.pc_max_iters == 0 {
            return Err(GrandError::InvalidConfig("corrector threshold/iterations invalid".into()));
        }
        Ok(())
    }
}

/// One accepted step in a solver run. `records[0]` is the initial state.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub tau: f64,
    /// Local error estimate; adaptive schemes only.
    pub error_estimate: Option<f64>,
    /// Per-channel feature minimum at this state.
    pub min: Vec<f64>,
    /// Per-channel feature maximum at this state.
    pub max: Vec<f64>,
    /// Cumulative dynamics evaluations up to and including this step.
    pub fevals: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolverTrace {
    pub scheme: &'static str,
    pub records: Vec<StepRecord>,
}

impl SolverTrace {
    pub fn start(scheme: &'static str, x0: &NodeField) -> Self {
        let mut trace = Self { scheme, records: Vec::new() };
        trace.records.push(StepRecord {
            t: 0.0,
            tau: 0.0,
            error_estimate: None,
            min: x0.channel_min(),
            max: x0.channel_max(),
            fevals: 0,
        });
        trace
    }

    pub fn push(&mut self, t: f64, tau: f64, err: Option<f64>, x: &NodeField, fevals: usize) {
        self.records.push(StepRecord {
            t,
            tau,
            error_estimate: err,
            min: x.channel_min(),
            max: x.channel_max(),
            fevals,
        });
    }

    /// Number of accepted steps (the initial record does not count).
    pub fn accepted_steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_t(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }

    pub fn fevals(&self) -> usize {
        self.records.last().map_or(0, |r| r.fevals)
    }
}

#[derive(Debug)]
pub struct Solution {
    pub state: NodeField,
    pub trace: SolverTrace,
}

/// A temporal discretisation scheme, selectable by name at runtime.
pub trait Integrator: Send + Sync {
    fn name(&self) -> &'static str;

    fn integrate(
        &self,
        dynamics: &dyn Dynamics,
        x0: &NodeField,
        cfg: &SchemeConfig,
    ) -> Result<Solution>;
}

static REGISTRY: OnceLock<Vec<&'static dyn Integrator>> = OnceLock::new();

/// All registered schemes, in declaration order.
pub fn registry() -> &'static [&'static dyn Integrator] {
    REGISTRY.get_or_init(|| {
        vec![
            &ExplicitEuler as &'static dyn Integrator,
            &ImplicitEuler,
            &Rk4,
            &Ab4,
            &Am4Pc,
            &Dopri5,
            &Expm,
        ]
    })
}

pub fn integrator_by_name(name: &str) -> Result<&'static dyn Integrator> {
    registry()
        .iter()
        .copied()
        .find(|i| i.name() == name)
        .ok_or_else(|| GrandError::InvalidConfig(format!("unknown scheme '{name}'")))
}

pub fn integrator_for(kind: SchemeKind) -> &'static dyn Integrator {
    integrator_by_name(kind.as_str()).expect("every kind is registered")
}

/// Scheme dispatch: validates the config, handles the empty horizon, and
/// hands off to the registered integrator.
pub fn integrate(dynamics: &dyn Dynamics, x0: &NodeField, cfg: &SchemeConfig) -> Result<Solution> {
    cfg.validate()?;
    if cfg.t_end == 0.0 {
        let trace = SolverTrace::start(cfg.scheme.as_str(), x0);
        return Ok(Solution { state: x0.clone(), trace });
    }
    integrator_for(cfg.scheme).integrate(dynamics, x0, cfg)
}

/// Step plan for fixed-step schemes: uniform `tau` with the last step
/// clipped to land exactly on `t_end`.
pub(crate) fn plan_steps(t_end: f64, tau: f64) -> Vec<(f64, f64)> {
    let ratio = t_end / tau;
    let rounded = ratio.round();
    let k = if rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    };
    let k = k.max(1);
    let mut plan = Vec::with_capacity(k);
    let mut t_prev = 0.0;
    for i in 1..=k {
        let t_next = if i == k { t_end } else { i as f64 * tau };
        plan.push((t_next, t_next - t_prev));
        t_prev = t_next;
    }
    plan
}

/// Divergence guard shared by the stepping loops.
pub(crate) fn check_state(x: &NodeField, t: f64, amplitude_limit: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(GrandError::TrajectoryDiverged { t, amplitude: f64::INFINITY });
    }
    let amp = x.inf_norm();
    if amp > amplitude_limit {
        return Err(GrandError::TrajectoryDiverged { t, amplitude: amp });
    }
    Ok(())
}

pub(crate) fn amplitude_limit(x0: &NodeField) -> f64 {
    1e9 * (x0.inf_norm() + 1.0)
}
