//! Finite-difference validation of the reverse-mode gradients through the
//! solver steps, for the linear and nonlinear variants.

use grand_core::autodiff::loss_and_gradients;
use grand_core::field::NodeField;
use grand_core::graph::Graph;
use grand_core::model::{DiffusionSpace, GrandModel, ModelDims, Variant};
use grand_core::solver::{SchemeConfig, SchemeKind};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

struct Problem {
    graph: Graph,
    x_in: NodeField,
    labels: Vec<usize>,
    mask: Vec<usize>,
}

fn problem(seed: u64) -> Problem {
    let n = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        edges.push((i, (i + 1) % n)); // ring keeps it connected
    }
    for _ in 0..8 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    let graph = Graph::from_edges(n, &edges).unwrap();
    let x_in = NodeField::from_array(Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0)));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let mask: Vec<usize> = (0..n).step_by(2).collect();
    Problem { graph, x_in, labels, mask }
}

fn model_for(variant: Variant, scheme: SchemeKind, seed: u64) -> GrandModel {
    let dims = ModelDims { d_in: 3, hidden: 4, classes: 2, d_k: 2, heads: 2 };
    let cfg = SchemeConfig::with(scheme, 0.25, 0.5); // two steps
    let mut model = GrandModel::init(dims, variant, cfg, None, seed).unwrap();
    // break the constant-attention symmetry so W_K and W_Q gradients differ
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for v in model.attention.w_k.iter_mut().chain(model.attention.w_q.iter_mut()) {
        *v += rng.gen_range(-0.3..0.3);
    }
    model
}

fn tape_loss(model: &GrandModel, space: &DiffusionSpace, p: &Problem) -> f64 {
    loss_and_gradients(model, space, &p.x_in, &p.labels, &p.mask, None)
        .unwrap()
        .loss
}

/// Central finite differences against every analytic gradient entry.
fn check_all_params(variant: Variant, scheme: SchemeKind) -> f64 {
    let p = problem(17);
    let space = DiffusionSpace::base_only(&p.graph);
    let model = model_for(variant, scheme, 5);
    let out = loss_and_gradients(&model, &space, &p.x_in, &p.labels, &p.mask, None).unwrap();

    let mut worst: f64 = 0.0;
    let tensors: Vec<(&str, Vec<f64>)> = vec![
        ("encoder_w", out.grads.encoder_w.iter().copied().collect()),
        ("encoder_b", out.grads.encoder_b.iter().copied().collect()),
        ("w_k", out.grads.w_k.iter().copied().collect()),
        ("w_q", out.grads.w_q.iter().copied().collect()),
        ("decoder_w", out.grads.decoder_w.iter().copied().collect()),
        ("decoder_b", out.grads.decoder_b.iter().copied().collect()),
    ];
    for (name, analytic) in tensors {
        for idx in 0..analytic.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            {
                let (p_t, m_t) = match name {
                    "encoder_w" => (plus.encoder_w.as_slice_mut().unwrap(), minus.encoder_w.as_slice_mut().unwrap()),
                    "encoder_b" => (plus.encoder_b.as_slice_mut().unwrap(), minus.encoder_b.as_slice_mut().unwrap()),
                    "w_k" => (plus.attention.w_k.as_slice_mut().unwrap(), minus.attention.w_k.as_slice_mut().unwrap()),
                    "w_q" => (plus.attention.w_q.as_slice_mut().unwrap(), minus.attention.w_q.as_slice_mut().unwrap()),
                    "decoder_w" => (plus.decoder_w.as_slice_mut().unwrap(), minus.decoder_w.as_slice_mut().unwrap()),
                    "decoder_b" => (plus.decoder_b.as_slice_mut().unwrap(), minus.decoder_b.as_slice_mut().unwrap()),
                    _ => unreachable!(),
                };
                let h = FD_STEP * p_t[idx].abs().max(1.0);
                p_t[idx] += h;
                m_t[idx] -= h;
            }
            let h = FD_STEP
                * match name {
                    "encoder_w" => model.encoder_w.as_slice().unwrap()[idx],
                    "encoder_b" => model.encoder_b.as_slice().unwrap()[idx],
                    "w_k" => model.attention.w_k.as_slice().unwrap()[idx],
                    "w_q" => model.attention.w_q.as_slice().unwrap()[idx],
                    "decoder_w" => model.decoder_w.as_slice().unwrap()[idx],
                    "decoder_b" => model.decoder_b.as_slice().unwrap()[idx],
                    _ => unreachable!(),
                }
                .abs()
                .max(1.0);
            let fd = (tape_loss(&plus, &space, &p) - tape_loss(&minus, &space, &p)) / (2.0 * h);
            let g = analytic[idx];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-5);
            assert!(
                rel <= REL_TOL,
                "{variant:?}/{scheme:?} {name}[{idx}]: analytic {g:.8e} vs fd {fd:.8e} (rel {rel:.3e})"
            );
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn linear_variant_explicit_euler() {
    let worst = check_all_params(Variant::GrandL, SchemeKind::ExplicitEuler);
    println!("grand-l/explicit-euler worst rel dev {worst:.3e}");
}

#[test]
fn linear_variant_rk4() {
    let worst = check_all_params(Variant::GrandL, SchemeKind::Rk4);
    println!("grand-l/rk4 worst rel dev {worst:.3e}");
}

#[test]
fn nonlinear_variant_explicit_euler() {
    let worst = check_all_params(Variant::GrandNl, SchemeKind::ExplicitEuler);
    println!("grand-nl/explicit-euler worst rel dev {worst:.3e}");
}

#[test]
fn nonlinear_variant_rk4() {
    let worst = check_all_params(Variant::GrandNl, SchemeKind::Rk4);
    println!("grand-nl/rk4 worst rel dev {worst:.3e}");
}

#[test]
fn nonlinear_variant_ab4_with_bootstrap() {
    // six steps so the multistep history path is exercised past bootstrap
    let p = problem(23);
    let space = DiffusionSpace::base_only(&p.graph);
    let mut model = model_for(Variant::GrandNl, SchemeKind::Ab4, 9);
    model.scheme.tau = 0.2;
    model.scheme.t_end = 1.2;
    let out = loss_and_gradients(&model, &space, &p.x_in, &p.labels, &p.mask, None).unwrap();

    // spot-check a handful of entries per tensor by finite differences
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..6 {
        let idx = rng.gen_range(0..model.attention.w_k.len());
        let mut plus = model.clone();
        let mut minus = model.clone();
        let h = FD_STEP;
        plus.attention.w_k.as_slice_mut().unwrap()[idx] += h;
        minus.attention.w_k.as_slice_mut().unwrap()[idx] -= h;
        let fd = (tape_loss(&plus, &space, &p) - tape_loss(&minus, &space, &p)) / (2.0 * h);
        let g = out.grads.w_k.as_slice().unwrap()[idx];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-5);
        assert!(rel <= REL_TOL, "ab4 w_k[{idx}]: analytic {g:.8e} vs fd {fd:.8e}");
    }
    for _ in 0..6 {
        let idx = rng.gen_range(0..model.encoder_w.len());
        let mut plus = model.clone();
        let mut minus = model.clone();
        let h = FD_STEP;
        plus.encoder_w.as_slice_mut().unwrap()[idx] += h;
        minus.encoder_w.as_slice_mut().unwrap()[idx] -= h;
        let fd = (tape_loss(&plus, &space, &p) - tape_loss(&minus, &space, &p)) / (2.0 * h);
        let g = out.grads.encoder_w.as_slice().unwrap()[idx];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-5);
        assert!(rel <= REL_TOL, "ab4 encoder_w[{idx}]: analytic {g:.8e} vs fd {fd:.8e}");
    }
}

#[test]
fn frozen_variant_pulls_attention_jacobian_once() {
    let p = problem(31);
    let space = DiffusionSpace::base_only(&p.graph);

    let model = model_for(Variant::GrandL, SchemeKind::Rk4, 3);
    let out = loss_and_gradients(&model, &space, &p.x_in, &p.labels, &p.mask, None).unwrap();
    assert_eq!(out.stats.attention_vjps, 1);

    let model = model_for(Variant::GrandNl, SchemeKind::Rk4, 3);
    let out = loss_and_gradients(&model, &space, &p.x_in, &p.labels, &p.mask, None).unwrap();
    // two steps, four stage pulls each
    assert_eq!(out.stats.attention_vjps, 8);
}

#[test]
fn unmasked_nodes_carry_no_learning_signal() {
    let p = problem(41);
    let space = DiffusionSpace::base_only(&p.graph);
    let model = model_for(Variant::GrandNl, SchemeKind::Rk4, 7);

    let base = loss_and_gradients(&model, &space, &p.x_in, &p.labels, &p.mask, None).unwrap();
    // flipping the label of a node outside the mask changes nothing
    let mut flipped = p.labels.clone();
    let outside = (0..flipped.len()).find(|i| !p.mask.contains(i)).unwrap();
    flipped[outside] = 1 - flipped[outside];
    let alt = loss_and_gradients(&model, &space, &p.x_in, &flipped, &p.mask, None).unwrap();
    assert_eq!(base.loss, alt.loss);
    assert_eq!(base.grads.encoder_w, alt.grads.encoder_w);
    assert_eq!(base.grads.w_k, alt.grads.w_k);
    assert_eq!(base.grads.decoder_w, alt.grads.decoder_w);
}

#[test]
fn adaptive_scheme_rejected_for_training() {
    let p = problem(43);
    let space = DiffusionSpace::base_only(&p.graph);
    let mut model = model_for(Variant::GrandL, SchemeKind::Rk4, 3);
    model.scheme.scheme = SchemeKind::Dopri5;
    let err = loss_and_gradients(&model, &space, &p.x_in, &p.labels, &p.mask, None).unwrap_err();
    assert!(matches!(err, grand_core::GrandError::UnsupportedConfig(_)));

    model.scheme.scheme = SchemeKind::ImplicitEuler;
    let err = loss_and_gradients(&model, &space, &p.x_in, &p.labels, &p.mask, None).unwrap_err();
    assert!(matches!(err, grand_core::GrandError::UnsupportedConfig(_)));
}
