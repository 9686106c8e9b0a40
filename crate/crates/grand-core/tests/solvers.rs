//! Cross-scheme integration properties: convergence orders against the
//! analytic propagator, envelope preservation, and the multistep stability
//! contrast.

mod common;

use common::{fit_loglog_slope, random_attention, random_field, random_graph};
use grand_core::attention::{shift_operator, uniform_attention};
use grand_core::dynamics::LinearDynamics;
use grand_core::solver::{
    expm_solve, integrate, SchemeConfig, SchemeKind,
};
use grand_core::sparse::CsrPattern;
use grand_core::stability::{envelope_monitor, adaptive_slack, FIXED_STEP_SLACK};
use grand_core::GrandError;
use std::sync::Arc;

fn scheme_error_at(kind: SchemeKind, tau: f64, t_end: f64, seed: u64) -> f64 {
    let g = random_graph(16, 12, seed);
    let a = random_attention(&g, seed + 1);
    let x0 = random_field(16, 2, -1.0, 1.0, seed + 2);
    let reference = expm_solve(&shift_operator(&a), &x0, t_end).unwrap();

    let dynamics = LinearDynamics::new(a);
    let mut cfg = SchemeConfig::with(kind, tau, t_end);
    cfg.pc_threshold = 1e-13;
    cfg.pc_max_iters = 500;
    cfg.jacobi_tol = 1e-13;
    cfg.jacobi_max_iters = Some(20_000);
    let sol = integrate(&dynamics, &x0, &cfg).unwrap();
    sol.state.inf_dist(&reference)
}

fn convergence_slope(kind: SchemeKind, taus: &[f64]) -> f64 {
    let t_end = 2.0;
    let errs: Vec<f64> = taus.iter().map(|&tau| scheme_error_at(kind, tau, t_end, 70)).collect();
    fit_loglog_slope(taus, &errs)
}

#[test]
fn euler_first_order() {
    let slope = convergence_slope(SchemeKind::ExplicitEuler, &[0.4, 0.2, 0.1, 0.05]);
    assert!((slope - 1.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn implicit_euler_first_order() {
    let slope = convergence_slope(SchemeKind::ImplicitEuler, &[0.4, 0.2, 0.1, 0.05]);
    assert!((slope - 1.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn rk4_fourth_order() {
    let slope = convergence_slope(SchemeKind::Rk4, &[0.1, 0.05, 0.025, 0.0125]);
    assert!((slope - 4.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn ab4_fourth_order() {
    let slope = convergence_slope(SchemeKind::Ab4, &[0.1, 0.05, 0.025, 0.0125]);
    assert!((slope - 4.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn am4_pc_fourth_order() {
    let slope = convergence_slope(SchemeKind::Am4Pc, &[0.1, 0.05, 0.025, 0.0125]);
    assert!((slope - 4.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn dopri5_matches_analytic_solution() {
    let g = random_graph(16, 14, 100);
    let a = random_attention(&g, 101);
    let x0 = random_field(16, 3, -1.0, 1.0, 102);
    let reference = expm_solve(&shift_operator(&a), &x0, 3.0).unwrap();

    let dynamics = LinearDynamics::new(a);
    let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.3, 3.0);
    cfg.atol = 1e-8;
    cfg.rtol = 1e-6;
    let sol = integrate(&dynamics, &x0, &cfg).unwrap();
    let scale = reference.inf_norm().max(1e-12);
    assert!(sol.state.inf_dist(&reference) / scale <= 1e-5);
}

#[test]
fn expm_agrees_with_tight_dopri5() {
    let g = random_graph(32, 30, 200);
    let a = random_attention(&g, 201);
    let x0 = random_field(32, 2, 0.0, 1.0, 202);

    let dynamics = LinearDynamics::new(a.clone());
    let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.2, 2.0);
    cfg.atol = 1e-10;
    cfg.rtol = 1e-10;
    let adaptive = integrate(&dynamics, &x0, &cfg).unwrap();
    let analytic = expm_solve(&shift_operator(&a), &x0, 2.0).unwrap();
    let scale = analytic.inf_norm().max(1e-12);
    assert!(adaptive.state.inf_dist(&analytic) / scale <= 1e-8);
}

#[test]
fn all_schemes_converge_to_common_reference() {
    let g = random_graph(12, 8, 300);
    let a = random_attention(&g, 301);
    let x0 = random_field(12, 1, -0.5, 0.5, 302);
    let t_end = 1.5;
    let reference = expm_solve(&shift_operator(&a), &x0, t_end).unwrap();

    for kind in [
        SchemeKind::ExplicitEuler,
        SchemeKind::ImplicitEuler,
        SchemeKind::Rk4,
        SchemeKind::Ab4,
        SchemeKind::Am4Pc,
    ] {
        let dynamics = LinearDynamics::new(a.clone());
        let mut cfg = SchemeConfig::with(kind, 0.01, t_end);
        cfg.jacobi_tol = 1e-13;
        cfg.jacobi_max_iters = Some(50_000);
        cfg.pc_threshold = 1e-13;
        cfg.pc_max_iters = 500;
        let sol = integrate(&dynamics, &x0, &cfg).unwrap();
        let err = sol.state.inf_dist(&reference);
        assert!(err < 5e-2, "{kind:?} err {err}");
    }
    // dopri5 with tight tolerances should be closest of all
    let dynamics = LinearDynamics::new(a.clone());
    let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.1, t_end);
    cfg.atol = 1e-12;
    cfg.rtol = 1e-10;
    let sol = integrate(&dynamics, &x0, &cfg).unwrap();
    assert!(sol.state.inf_dist(&reference) < 1e-8);
}

#[test]
fn explicit_envelope_holds_below_unit_step() {
    // random instances stay inside the initial min-max box per channel
    for seed in 0..20u64 {
        let n = 20 + (seed as usize % 60);
        let g = random_graph(n, n / 2, 400 + seed);
        let a = random_attention(&g, 500 + seed);
        let x0 = random_field(n, 2, 0.0, 1.0, 600 + seed);
        let dynamics = LinearDynamics::new(a);
        let tau = 0.1 + 0.08 * (seed % 10) as f64;
        let cfg = SchemeConfig::with(SchemeKind::ExplicitEuler, tau, tau * 5.0);
        let sol = integrate(&dynamics, &x0, &cfg).unwrap();
        let violations = envelope_monitor(&sol.trace, FIXED_STEP_SLACK);
        assert!(violations.is_empty(), "seed {seed} tau {tau}: {violations:?}");
    }
}

#[test]
fn explicit_envelope_witness_above_threshold() {
    // path graph, uniform attention, tau = 1.9: leaves the envelope
    let g = random_graph(2, 0, 0); // 2-ring = single edge after dedup
    let a = uniform_attention(&Arc::new(CsrPattern::from_graph(&g)));
    let x0 = random_field(2, 1, 0.0, 1.0, 3);
    let dynamics = LinearDynamics::new(a);
    let cfg = SchemeConfig::with(SchemeKind::ExplicitEuler, 1.9, 1.9 * 3.0);
    match integrate(&dynamics, &x0, &cfg) {
        Ok(sol) => {
            let violations = envelope_monitor(&sol.trace, FIXED_STEP_SLACK);
            assert!(!violations.is_empty());
        }
        Err(GrandError::TrajectoryDiverged { .. }) => {} // amplified past the guard
        Err(other) => panic!("unexpected error {other}"),
    }
}

#[test]
fn implicit_envelope_holds_for_any_step() {
    for (seed, tau) in [(1u64, 0.5), (2, 1.0), (3, 10.0), (4, 100.0)] {
        let n = 30;
        let g = random_graph(n, 10, 700 + seed);
        let a = random_attention(&g, 800 + seed);
        let x0 = random_field(n, 2, -1.0, 2.0, 900 + seed);
        let dynamics = LinearDynamics::new(a);
        let mut cfg = SchemeConfig::with(SchemeKind::ImplicitEuler, tau, tau * 4.0);
        cfg.jacobi_tol = 1e-12;
        cfg.jacobi_max_iters = Some(100_000);
        let sol = integrate(&dynamics, &x0, &cfg).unwrap();
        let violations = envelope_monitor(&sol.trace, FIXED_STEP_SLACK);
        assert!(violations.is_empty(), "tau {tau}: {violations:?}");
    }
}

#[test]
fn dopri5_envelope_within_tolerance_slack() {
    for seed in 0..10u64 {
        let n = 24;
        let g = random_graph(n, 12, 1000 + seed);
        let a = random_attention(&g, 1100 + seed);
        let x0 = random_field(n, 2, 0.0, 1.0, 1200 + seed);
        let dynamics = LinearDynamics::new(a);
        let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.3, 5.0);
        cfg.atol = 1e-8;
        cfg.rtol = 1e-6;
        let sol = integrate(&dynamics, &x0, &cfg).unwrap();
        let slack = adaptive_slack(cfg.atol, cfg.rtol, &x0);
        let violations = envelope_monitor(&sol.trace, slack);
        assert!(violations.is_empty(), "seed {seed}: {violations:?}");
    }
}

#[test]
fn multistep_stability_contrast_at_unit_step() {
    // 2-node path: the shifted spectrum reaches -2 exactly. The explicit
    // multistep scheme blows up at tau = 1 while the corrector-driven
    // implicit one stays bounded.
    let g = random_graph(2, 0, 0);
    let a = uniform_attention(&Arc::new(CsrPattern::from_graph(&g)));
    let x0 = random_field(2, 1, 0.0, 1.0, 5);

    let dynamics = LinearDynamics::new(a.clone());
    let cfg = SchemeConfig::with(SchemeKind::Ab4, 1.0, 40.0);
    let explicit_result = integrate(&dynamics, &x0, &cfg);
    let exploded = match explicit_result {
        Err(GrandError::TrajectoryDiverged { .. }) => true,
        Ok(sol) => sol.state.inf_norm() > 10.0 * x0.inf_norm(),
        Err(other) => panic!("unexpected error {other}"),
    };
    assert!(exploded, "explicit multistep should destabilize at tau=1 here");

    let dynamics = LinearDynamics::new(a);
    let mut cfg = SchemeConfig::with(SchemeKind::Am4Pc, 1.0, 40.0);
    cfg.pc_threshold = 1e-10;
    cfg.pc_max_iters = 200;
    let sol = integrate(&dynamics, &x0, &cfg).unwrap();
    assert!(sol.state.inf_norm() <= x0.inf_norm() + 1e-6);
}

#[test]
fn stiffness_error_reports_underflow() {
    // dynamics with a discontinuity the controller cannot resolve
    use grand_core::dynamics::FnDynamics;
    use grand_core::field::NodeField;
    let dynamics = FnDynamics::new(|x: &NodeField, t: f64| {
        let s = if t < 0.5 { 1e12 } else { -1e12 };
        x.scale(s)
    });
    let x0 = random_field(2, 1, 0.5, 1.0, 8);
    let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.1, 1.0);
    cfg.atol = 1e-12;
    cfg.rtol = 1e-10;
    let err = integrate(&dynamics, &x0, &cfg).unwrap_err();
    assert!(
        matches!(err, GrandError::StepSizeUnderflow { .. } | GrandError::TrajectoryDiverged { .. }),
        "got {err}"
    );
}
