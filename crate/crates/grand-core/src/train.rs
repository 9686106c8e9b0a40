//! Full-batch training on one labelled graph, with deterministic seeded
//! behavior: identical seeds and configs produce identical metric history.

use crate::autodiff::{loss_and_gradients, ParamGrads};
use crate::data::Dataset;
use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::model::{accuracy, forward_with_pattern, rewire_pattern_at, DiffusionSpace, GrandModel, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub weight_decay: f64,
    /// Early stop after this many epochs without a validation improvement;
    /// 0 disables early stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            weight_decay: 0.0,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(GrandError::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub struct TrainOutcome {
    pub model: GrandModel,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy at the best-validation checkpoint.
    pub test_acc: f64,
}

/// Adam state per tensor, stored flat.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    states: Vec<AdamState>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, sizes: &[usize]) -> Self {
        let states = sizes.iter().map(|&s| AdamState::new(s)).collect();
        Self { kind, lr, weight_decay, states }
    }

    fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * (g + self.weight_decay * *p);
                }
            }
            OptimizerKind::Adam => {
                let st = &mut self.states[slot];
                st.t += 1;
                let b1t = 1.0 - ADAM_B1.powi(st.t as i32);
                let b2t = 1.0 - ADAM_B2.powi(st.t as i32);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    st.m[k] = ADAM_B1 * st.m[k] + (1.0 - ADAM_B1) * g;
                    st.v[k] = ADAM_B2 * st.v[k] + (1.0 - ADAM_B2) * g * g;
                    let m_hat = st.m[k] / b1t;
                    let v_hat = st.v[k] / b2t;
                    // decoupled weight decay
                    *p -= self.lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + self.weight_decay * *p);
                }
            }
        }
    }
}

fn apply_update(model: &mut GrandModel, grads: &ParamGrads, opt: &mut Optimizer) {
    let pairs: Vec<(&mut [f64], &[f64])> = vec![
        (model.encoder_w.as_slice_mut().unwrap(), grads.encoder_w.as_slice().unwrap()),
        (model.encoder_b.as_slice_mut().unwrap(), grads.encoder_b.as_slice().unwrap()),
        (model.attention.w_k.as_slice_mut().unwrap(), grads.w_k.as_slice().unwrap()),
        (model.attention.w_q.as_slice_mut().unwrap(), grads.w_q.as_slice().unwrap()),
        (model.decoder_w.as_slice_mut().unwrap(), grads.decoder_w.as_slice().unwrap()),
        (model.decoder_b.as_slice_mut().unwrap(), grads.decoder_b.as_slice().unwrap()),
    ];
    for (slot, (p, g)) in pairs.into_iter().enumerate() {
        opt.update(slot, p, g);
    }
}

fn param_sizes(model: &GrandModel) -> Vec<usize> {
    vec![
        model.encoder_w.len(),
        model.encoder_b.len(),
        model.attention.w_k.len(),
        model.attention.w_q.len(),
        model.decoder_w.len(),
        model.decoder_b.len(),
    ]
}

/// Full-batch training loop. The rewired variant recomputes its edge
/// selection once per epoch from the encoded features; evaluation reuses
/// that epoch's pattern. Returns the best-validation checkpoint.
pub fn train(model: GrandModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let space = DiffusionSpace::prepare(&data.graph, model.rewire.as_ref())?;
    train_on_space(model, data, &space, cfg)
}

/// Training loop on an already-prepared spatial discretisation, so callers
/// can keep densification out of their per-epoch timings.
pub fn train_on_space(
    mut model: GrandModel,
    data: &Dataset,
    space: &DiffusionSpace,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let x_in = data.features_field();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.weight_decay, &param_sizes(&model));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, GrandModel)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let pattern = if model.variant == Variant::GrandNlRw {
            let x0 = model.encode(&x_in)?;
            Some(rewire_pattern_at(&model, space, &x0)?)
        } else {
            None
        };

        let out = loss_and_gradients(
            &model,
            space,
            &x_in,
            &data.labels,
            &data.splits.train,
            pattern.clone(),
        )?;
        if !out.loss.is_finite() {
            return Err(GrandError::TrainingDiverged {
                epoch,
                what: format!("loss became {}", out.loss),
            });
        }

        // metrics on the same epoch pattern before updating
        let val_acc = accuracy(&out.logits, &data.labels, &data.splits.val);
        let test_acc = accuracy(&out.logits, &data.labels, &data.splits.test);
        history.push(EpochMetrics { epoch, train_loss: out.loss, val_acc, test_acc });

        let improved = match &best {
            None => true,
            Some((_, best_val, _, _)) => val_acc > *best_val,
        };
        if improved {
            best = Some((epoch, val_acc, test_acc, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }

        apply_update(&mut model, &out.grads, &mut opt);
    }

    let (best_epoch, best_val_acc, test_acc, best_model) =
        best.ok_or_else(|| GrandError::InvalidConfig("training ran zero epochs".into()))?;
    Ok(TrainOutcome { model: best_model, history, best_epoch, best_val_acc, test_acc })
}

/// Evaluates a model on a dataset split without touching parameters.
pub fn evaluate(model: &GrandModel, data: &Dataset) -> Result<(f64, f64, f64)> {
    let space = DiffusionSpace::prepare(&data.graph, model.rewire.as_ref())?;
    let x_in = data.features_field();
    let out = forward_with_pattern(model, &space, &x_in, None)?;
    let train_loss = crate::model::loss(&out.logits, &data.labels, &data.splits.train)?;
    let val_acc = accuracy(&out.logits, &data.labels, &data.splits.val);
    let test_acc = accuracy(&out.logits, &data.labels, &data.splits.test);
    Ok((train_loss, val_acc, test_acc))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DepthPoint {
    pub t_end: f64,
    pub accuracy: f64,
    pub baseline_accuracy: Option<f64>,
}

/// Trains one model per integration horizon with everything else held
/// fixed; optionally trains the uniform-diffusivity baseline alongside.
pub fn depth_sweep(
    template: &GrandModel,
    data: &Dataset,
    cfg: &TrainConfig,
    horizons: &[f64],
    with_baseline: bool,
) -> Result<Vec<DepthPoint>> {
    let mut points = Vec::with_capacity(horizons.len());
    for &t_end in horizons {
        let mut model = template.clone();
        model.scheme.t_end = t_end;
        let outcome = train(model, data, cfg)?;
        let baseline_accuracy = if with_baseline {
            let mut baseline = template.clone();
            baseline.variant = Variant::Uniform;
            baseline.scheme.t_end = t_end;
            baseline.scheme.nonlinear = false;
            Some(train(baseline, data, cfg)?.test_acc)
        } else {
            None
        };
        points.push(DepthPoint { t_end, accuracy: outcome.test_acc, baseline_accuracy });
    }
    Ok(points)
}

/// Returns the field view of dataset features (helper shared with the CLI).
pub fn features_of(data: &Dataset) -> NodeField {
    data.features_field()
}
