//! The diffusion classifier: linear encoder, attention-driven diffusion
//! block, linear decoder. Variants differ in how the diffusivity evolves:
//! frozen at the encoded input (linear), re-evaluated along the trajectory
//! (nonlinear), or nonlinear on a rewired edge set. A uniform-diffusivity
//! baseline is kept for depth comparisons.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{build_attention, uniform_attention, AttentionParams, AttentionVariant};
use crate::dynamics::{AttentionDynamics, LinearDynamics};
use crate::error::{GrandError, Result};
use crate::field::{add_row_bias, NodeField};
use crate::graph::Graph;
use crate::rewire::{ppr_densify, threshold_rewire, RewireConfig, RewireMethod};
use crate::solver::{integrate, SchemeConfig, SolverTrace};
use crate::sparse::CsrPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    GrandL,
    GrandNl,
    GrandNlRw,
    /// Fixed uniform diffusivity with the same encoder/decoder; the
    /// stacked-averaging baseline used in depth comparisons.
    Uniform,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GrandL => "grand-l",
            Variant::GrandNl => "grand-nl",
            Variant::GrandNlRw => "grand-nl-rw",
            Variant::Uniform => "uniform",
        }
    }

    pub fn is_nonlinear(self) -> bool {
        matches!(self, Variant::GrandNl | Variant::GrandNlRw)
    }
}

impl std::str::FromStr for Variant {
    type Err = GrandError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grand-l" => Ok(Variant::GrandL),
            "grand-nl" => Ok(Variant::GrandNl),
            "grand-nl-rw" => Ok(Variant::GrandNlRw),
            "uniform" => Ok(Variant::Uniform),
            other => Err(GrandError::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub d_in: usize,
    pub hidden: usize,
    pub classes: usize,
    pub d_k: usize,
    pub heads: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.hidden == 0 || self.classes == 0 || self.d_k == 0 || self.heads == 0
        {
            return Err(GrandError::InvalidConfig("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GrandModel {
    pub dims: ModelDims,
    /// `hidden x d_in`.
    pub encoder_w: Array2<f64>,
    pub encoder_b: Array1<f64>,
    pub attention: AttentionParams,
    /// `classes x hidden`.
    pub decoder_w: Array2<f64>,
    pub decoder_b: Array1<f64>,
    pub variant: Variant,
    pub scheme: SchemeConfig,
    pub rewire: Option<RewireConfig>,
}

impl GrandModel {
    /// Seeded initialization: encoder/decoder uniform in `±1/sqrt(fan_in)`,
    /// attention weights constant at `1/sqrt(hidden * d_k)`.
    pub fn init(
        dims: ModelDims,
        variant: Variant,
        mut scheme: SchemeConfig,
        rewire: Option<RewireConfig>,
        seed: u64,
    ) -> Result<Self> {
        dims.validate()?;
        if let Some(rw) = &rewire {
            rw.validate()?;
        }
        scheme.nonlinear = variant.is_nonlinear();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_half = 1.0 / (dims.d_in as f64).sqrt();
        let dec_half = 1.0 / (dims.hidden as f64).sqrt();
        let encoder_w =
            Array2::from_shape_fn((dims.hidden, dims.d_in), |_| rng.gen_range(-enc_half..enc_half));
        let encoder_b = Array1::from_shape_fn(dims.hidden, |_| rng.gen_range(-enc_half..enc_half));
        let decoder_w = Array2::from_shape_fn((dims.classes, dims.hidden), |_| {
            rng.gen_range(-dec_half..dec_half)
        });
        let decoder_b = Array1::from_shape_fn(dims.classes, |_| rng.gen_range(-dec_half..dec_half));
        Ok(Self {
            dims,
            encoder_w,
            encoder_b,
            attention: AttentionParams::constant_init(dims.hidden, dims.d_k, dims.heads),
            decoder_w,
            decoder_b,
            variant,
            scheme,
            rewire,
        })
    }

    /// Trainable scalar count; independent of the integration horizon.
    pub fn param_count(&self) -> usize {
        self.encoder_w.len()
            + self.encoder_b.len()
            + self.attention.w_k.len()
            + self.attention.w_q.len()
            + self.attention.w_proj.len()
            + self.attention.attn_vec.len()
            + self.decoder_w.len()
            + self.decoder_b.len()
    }

    /// `X(0) = X_in E^T + b_e`.
    pub fn encode(&self, x_in: &NodeField) -> Result<NodeField> {
        if x_in.channels() != self.dims.d_in {
            return Err(GrandError::DimensionMismatch {
                context: "encoder",
                expected: format!("{} input channels", self.dims.d_in),
                actual: format!("{}", x_in.channels()),
            });
        }
        let encoded = add_row_bias(&x_in.values().dot(&self.encoder_w.t()), &self.encoder_b);
        Ok(NodeField::from_array(encoded))
    }

    pub fn decode(&self, x: &NodeField) -> Array2<f64> {
        add_row_bias(&x.values().dot(&self.decoder_w.t()), &self.decoder_b)
    }
}

/// The spatial discretisation a forward pass runs on: the input adjacency,
/// optionally replaced by a diffusion-densified pattern.
#[derive(Debug, Clone)]
pub struct DiffusionSpace {
    pub base: Arc<CsrPattern>,
    pub densified: Option<Arc<CsrPattern>>,
}

impl DiffusionSpace {
    pub fn base_only(graph: &Graph) -> Self {
        Self { base: Arc::new(CsrPattern::from_graph(graph)), densified: None }
    }

    /// Runs densification when the rewire config asks for it; the result is
    /// reused across epochs.
    pub fn prepare(graph: &Graph, rewire: Option<&RewireConfig>) -> Result<Self> {
        let base = Arc::new(CsrPattern::from_graph(graph));
        let densified = match rewire {
            Some(cfg) if cfg.method == RewireMethod::Ppr => {
                cfg.validate()?;
                let rewired = ppr_densify(graph, cfg.alpha, cfg.k)?;
                Some(rewired.pattern(cfg.allow_self_loops))
            }
            _ => None,
        };
        Ok(Self { base, densified })
    }

    pub fn active_pattern(&self) -> &Arc<CsrPattern> {
        self.densified.as_ref().unwrap_or(&self.base)
    }
}

/// Edge selection for the rewired variant: threshold the attention at the
/// encoded input and keep the surviving directed entries.
pub fn rewire_pattern_at(
    model: &GrandModel,
    space: &DiffusionSpace,
    x0: &NodeField,
) -> Result<Arc<CsrPattern>> {
    let rho = model.rewire.as_ref().map_or(0.0, |r| r.rho);
    let a0 = build_attention(&model.attention, x0, space.active_pattern())?;
    let selected = threshold_rewire(&a0, rho)?;
    Ok(selected.pattern().clone())
}

pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub state: NodeField,
    pub trace: SolverTrace,
    /// The edge pattern the diffusion actually ran on.
    pub pattern: Arc<CsrPattern>,
}

/// Encoder, diffusion to `T`, decoder. `pattern_override` fixes the rewired
/// edge set for the pass (the trainer recomputes it once per epoch);
/// without it the rewired variant thresholds afresh at `X(0)`.
pub fn forward_with_pattern(
    model: &GrandModel,
    space: &DiffusionSpace,
    x_in: &NodeField,
    pattern_override: Option<Arc<CsrPattern>>,
) -> Result<ForwardOutput> {
    let x0 = model.encode(x_in)?;
    let pattern = match (&model.variant, pattern_override) {
        (Variant::GrandNlRw, Some(p)) => p,
        (Variant::GrandNlRw, None) => rewire_pattern_at(model, space, &x0)?,
        (_, _) => space.active_pattern().clone(),
    };

    let solution = match model.variant {
        Variant::Uniform => {
            let dynamics = LinearDynamics::new(uniform_attention(&pattern));
            integrate(&dynamics, &x0, &model.scheme)?
        }
        Variant::GrandL => {
            let a0 = build_attention(&model.attention, &x0, &pattern)?;
            let dynamics = LinearDynamics::new(a0);
            integrate(&dynamics, &x0, &model.scheme)?
        }
        Variant::GrandNl | Variant::GrandNlRw => {
            let dynamics = AttentionDynamics::new(model.attention.clone(), pattern.clone());
            integrate(&dynamics, &x0, &model.scheme)?
        }
    };

    let logits = model.decode(&solution.state);
    Ok(ForwardOutput { logits, state: solution.state, trace: solution.trace, pattern })
}

pub fn forward(model: &GrandModel, space: &DiffusionSpace, x_in: &NodeField) -> Result<ForwardOutput> {
    forward_with_pattern(model, space, x_in, None)
}

/// Mean cross entropy over the masked nodes, computed through a stable
/// log-sum-exp.
pub fn loss(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(GrandError::InvalidConfig("loss mask is empty".into()));
    }
    let mut total = 0.0;
    for &i in mask {
        let row = logits.row(i);
        let label = labels[i];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / mask.len() as f64)
}

/// Fraction of masked nodes whose argmax logit matches the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let correct = mask
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best == labels[i]
        })
        .count();
    correct as f64 / mask.len() as f64
}

// --- checkpoint format ------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorBlob {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorBlob {
    fn of2(a: &Array2<f64>) -> Self {
        Self { shape: vec![a.nrows(), a.ncols()], data: a.iter().copied().collect() }
    }
    fn of1(a: &Array1<f64>) -> Self {
        Self { shape: vec![a.len()], data: a.to_vec() }
    }
    fn into2(self) -> Result<Array2<f64>> {
        if self.shape.len() != 2 {
            return Err(GrandError::InvalidConfig("expected rank-2 tensor".into()));
        }
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data)
            .map_err(|e| GrandError::InvalidConfig(format!("tensor shape: {e}")))
    }
    fn into1(self) -> Result<Array1<f64>> {
        Ok(Array1::from_vec(self.data))
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointMeta {
    variant: Variant,
    dims: ModelDims,
    scheme: SchemeConfig,
    rewire: Option<RewireConfig>,
    attention_variant: AttentionVariant,
    leaky_slope: f64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Checkpoint {
    meta: CheckpointMeta,
    tensors: std::collections::BTreeMap<String, TensorBlob>,
}

pub fn save_checkpoint(model: &GrandModel, path: &std::path::Path) -> Result<()> {
    let mut tensors = std::collections::BTreeMap::new();
    tensors.insert("encoder_w".to_string(), TensorBlob::of2(&model.encoder_w));
    tensors.insert("encoder_b".to_string(), TensorBlob::of1(&model.encoder_b));
    tensors.insert("w_k".to_string(), TensorBlob::of2(&model.attention.w_k));
    tensors.insert("w_q".to_string(), TensorBlob::of2(&model.attention.w_q));
    tensors.insert("w_proj".to_string(), TensorBlob::of2(&model.attention.w_proj));
    tensors.insert("attn_vec".to_string(), TensorBlob::of2(&model.attention.attn_vec));
    tensors.insert("decoder_w".to_string(), TensorBlob::of2(&model.decoder_w));
    tensors.insert("decoder_b".to_string(), TensorBlob::of1(&model.decoder_b));
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            variant: model.variant,
            dims: model.dims,
            scheme: model.scheme.clone(),
            rewire: model.rewire.clone(),
            attention_variant: model.attention.variant,
            leaky_slope: model.attention.leaky_slope,
        },
        tensors,
    };
    std::fs::write(path, serde_json::to_string_pretty(&checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<GrandModel> {
    let text = std::fs::read_to_string(path)?;
    let mut checkpoint: Checkpoint = serde_json::from_str(&text)?;
    let mut take2 = |name: &str| -> Result<Array2<f64>> {
        checkpoint
            .tensors
            .remove(name)
            .ok_or_else(|| GrandError::InvalidConfig(format!("checkpoint missing tensor '{name}'")))?
            .into2()
    };
    let encoder_w = take2("encoder_w")?;
    let w_k = take2("w_k")?;
    let w_q = take2("w_q")?;
    let w_proj = take2("w_proj")?;
    let attn_vec = take2("attn_vec")?;
    let decoder_w = take2("decoder_w")?;
    let encoder_b = checkpoint
        .tensors
        .remove("encoder_b")
        .ok_or_else(|| GrandError::InvalidConfig("checkpoint missing tensor 'encoder_b'".into()))?
        .into1()?;
    let decoder_b = checkpoint
        .tensors
        .remove("decoder_b")
        .ok_or_else(|| GrandError::InvalidConfig("checkpoint missing tensor 'decoder_b'".into()))?
        .into1()?;

    let meta = checkpoint.meta;
    let attention = AttentionParams {
        w_k,
        w_q,
        d_k: meta.dims.d_k,
        heads: meta.dims.heads,
        variant: meta.attention_variant,
        scale: Default::default(),
        w_proj,
        attn_vec,
        leaky_slope: meta.leaky_slope,
    };
    Ok(GrandModel {
        dims: meta.dims,
        encoder_w,
        encoder_b,
        attention,
        decoder_w,
        decoder_b,
        variant: meta.variant,
        scheme: meta.scheme,
        rewire: meta.rewire,
    })
}
