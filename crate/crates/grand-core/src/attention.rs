//! Attention diffusivities: row-stochastic operators on an edge pattern.
//!
//! Both mechanisms produce, per head, a softmax over each node's outgoing
//! edges; heads are averaged entrywise. The shifted form `A - I` acts as the
//! diffusion generator. Rows with no edges stay all-zero in both `A` and the
//! shifted operator, so isolated nodes hold their features.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{GrandError, Result};
use crate::field::NodeField;
use crate::sparse::{CsrPattern, SparseOperator};

/// Logit divisor for scaled dot-product attention. `Dk` divides by the key
/// dimension itself; `SqrtDk` by its square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LogitScale {
    Dk,
    SqrtDk,
}

impl Default for LogitScale {
    fn default() -> Self {
        LogitScale::Dk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AttentionVariant {
    ScaledDot,
    Bahdanau,
}

impl std::str::FromStr for AttentionVariant {
    type Err = GrandError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled-dot" => Ok(AttentionVariant::ScaledDot),
            "bahdanau" => Ok(AttentionVariant::Bahdanau),
            other => Err(GrandError::InvalidConfig(format!("unknown attention variant '{other}'"))),
        }
    }
}

/// Learned attention parameters. Key/query matrices hold all heads stacked:
/// `w_k` and `w_q` are `(heads * d_k) x d`; head `h` owns rows
/// `h*d_k .. (h+1)*d_k`. The Bahdanau fields are used only by that variant.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_k: Array2<f64>,
    pub w_q: Array2<f64>,
    pub d_k: usize,
    pub heads: usize,
    pub variant: AttentionVariant,
    pub scale: LogitScale,
    /// Bahdanau projection, `(heads * d_p) x d`.
    pub w_proj: Array2<f64>,
    /// Bahdanau scoring vector, `heads x 2*d_p`.
    pub attn_vec: Array2<f64>,
    pub leaky_slope: f64,
}

impl AttentionParams {
    /// Scaled dot-product parameters with the constant initialization
    /// `W_K = W_Q = 1/sqrt(d * d_k)`.
    pub fn constant_init(d: usize, d_k: usize, heads: usize) -> Self {
        let c = 1.0 / ((d * d_k) as f64).sqrt();
        Self {
            w_k: Array2::from_elem((heads * d_k, d), c),
            w_q: Array2::from_elem((heads * d_k, d), c),
            d_k,
            heads,
            variant: AttentionVariant::ScaledDot,
            scale: LogitScale::Dk,
            w_proj: Array2::zeros((0, d)),
            attn_vec: Array2::zeros((0, 0)),
            leaky_slope: 0.2,
        }
    }

    pub fn bahdanau(w_proj: Array2<f64>, attn_vec: Array2<f64>, heads: usize) -> Result<Self> {
        let d = w_proj.ncols();
        if heads == 0 || w_proj.nrows() % heads != 0 {
            return Err(GrandError::InvalidConfig("projection rows must split across heads".into()));
        }
        let d_p = w_proj.nrows() / heads;
        if attn_vec.nrows() != heads || attn_vec.ncols() != 2 * d_p {
            return Err(GrandError::InvalidConfig(format!(
                "scoring vector must be {heads} x {}",
                2 * d_p
            )));
        }
        Ok(Self {
            w_k: Array2::zeros((0, d)),
            w_q: Array2::zeros((0, d)),
            d_k: 1,
            heads,
            variant: AttentionVariant::Bahdanau,
            scale: LogitScale::Dk,
            w_proj,
            attn_vec,
            leaky_slope: 0.2,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(GrandError::InvalidConfig("attention needs at least one head".into()));
        }
        if self.d_k == 0 {
            return Err(GrandError::InvalidConfig("key dimension must be >= 1".into()));
        }
        let all_finite = self
            .w_k
            .iter()
            .chain(self.w_q.iter())
            .chain(self.w_proj.iter())
            .chain(self.attn_vec.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(GrandError::DataInvariant("attention parameters not finite".into()));
        }
        Ok(())
    }
}

/// One attention mechanism: per-head edge logits, softmax-normalized per row.
/// Implementations are pure functions of `(params, X, pattern)`.
pub trait AttentionMechanism: Send + Sync {
    fn name(&self) -> &'static str;

    /// Per-head logits aligned with the pattern's entries (`heads x nnz`).
    fn logits(&self, params: &AttentionParams, x: &NodeField, pattern: &CsrPattern) -> Array2<f64>;
}

pub struct ScaledDotAttention;
pub struct BahdanauAttention;

impl AttentionMechanism for ScaledDotAttention {
    fn name(&self) -> &'static str {
        "scaled-dot"
    }

    fn logits(&self, params: &AttentionParams, x: &NodeField, pattern: &CsrPattern) -> Array2<f64> {
        let keys = x.values().dot(&params.w_k.t()); // n x (h*dk)
        let queries = x.values().dot(&params.w_q.t());
        let denom = match params.scale {
            LogitScale::Dk => params.d_k as f64,
            LogitScale::SqrtDk => (params.d_k as f64).sqrt(),
        };
        let h = params.heads;
        let dk = params.d_k;
        let mut logits = Array2::zeros((h, pattern.nnz()));
        for head in 0..h {
            let base = head * dk;
            for i in 0..pattern.n {
                for pos in pattern.row_range(i) {
                    let j = pattern.col_indices[pos];
                    let mut dot = 0.0;
                    for k in 0..dk {
                        dot += keys[(i, base + k)] * queries[(j, base + k)];
                    }
                    logits[(head, pos)] = dot / denom;
                }
            }
        }
        logits
    }
}

impl AttentionMechanism for BahdanauAttention {
    fn name(&self) -> &'static str {
        "bahdanau"
    }

    fn logits(&self, params: &AttentionParams, x: &NodeField, pattern: &CsrPattern) -> Array2<f64> {
        let proj = x.values().dot(&params.w_proj.t()); // n x (h*dp)
        let h = params.heads;
        let dp = params.w_proj.nrows() / h;
        let slope = params.leaky_slope;
        let mut logits = Array2::zeros((h, pattern.nnz()));
        for head in 0..h {
            let base = head * dp;
            let a = params.attn_vec.row(head);
            for i in 0..pattern.n {
                // score(i,j) = leakyrelu(a^T [W x_i || W x_j])
                let mut self_part = 0.0;
                for k in 0..dp {
                    self_part += a[k] * proj[(i, base + k)];
                }
                for pos in pattern.row_range(i) {
                    let j = pattern.col_indices[pos];
                    let mut s = self_part;
                    for k in 0..dp {
                        s += a[dp + k] * proj[(j, base + k)];
                    }
                    logits[(head, pos)] = if s >= 0.0 { s } else { slope * s };
                }
            }
        }
        logits
    }
}

pub fn mechanism_for(variant: AttentionVariant) -> &'static dyn AttentionMechanism {
    match variant {
        AttentionVariant::ScaledDot => &ScaledDotAttention,
        AttentionVariant::Bahdanau => &BahdanauAttention,
    }
}

/// Row-wise softmax of per-head logits over the pattern, one operator per
/// head. Empty rows stay empty (no entries to normalize).
pub fn softmax_per_head(logits: &Array2<f64>, pattern: &Arc<CsrPattern>) -> Vec<SparseOperator> {
    let h = logits.nrows();
    (0..h)
        .map(|head| {
            let mut values = vec![0.0; pattern.nnz()];
            let row_chunks: Vec<(usize, &mut [f64])> = {
                // split the value buffer by row for deterministic parallel fill
                let mut chunks = Vec::with_capacity(pattern.n);
                let mut rest: &mut [f64] = &mut values;
                for i in 0..pattern.n {
                    let len = pattern.row_range(i).len();
                    let (head_chunk, tail) = rest.split_at_mut(len);
                    chunks.push((i, head_chunk));
                    rest = tail;
                }
                chunks
            };
            row_chunks.into_par_iter().for_each(|(i, out)| {
                let range = pattern.row_range(i);
                if range.is_empty() {
                    return;
                }
                let row_logits = &logits.row(head).to_slice().unwrap()[range.clone()];
                let m = row_logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
                let mut sum = 0.0;
                for (o, l) in out.iter_mut().zip(row_logits) {
                    let e = (l - m).exp();
                    *o = e;
                    sum += e;
                }
                let inv = 1.0 / sum;
                for o in out.iter_mut() {
                    *o *= inv;
                }
            });
            SparseOperator::new(pattern.clone(), values)
        })
        .collect()
}

/// Entrywise mean of per-head operators; patterns must match.
pub fn multi_head_average(heads: &[SparseOperator]) -> Result<SparseOperator> {
    SparseOperator::mean(heads)
        .ok_or_else(|| GrandError::DataInvariant("head sparsity patterns differ".into()))
}

/// Builds the averaged attention operator `A(X)` for the configured variant.
pub fn build_attention(
    params: &AttentionParams,
    x: &NodeField,
    pattern: &Arc<CsrPattern>,
) -> Result<SparseOperator> {
    params.validate()?;
    x.check_rows(pattern.n, "attention")?;
    let mech = mechanism_for(params.variant);
    let logits = mech.logits(params, x, pattern);
    let heads = softmax_per_head(&logits, pattern);
    multi_head_average(&heads)
}

/// Uniform attention `a_ij = 1/deg(i)` on the pattern; the fixed-diffusivity
/// baseline and the zero-parameter limit of both mechanisms.
pub fn uniform_attention(pattern: &Arc<CsrPattern>) -> SparseOperator {
    let mut values = vec![0.0; pattern.nnz()];
    for i in 0..pattern.n {
        let range = pattern.row_range(i);
        if range.is_empty() {
            continue;
        }
        let inv = 1.0 / range.len() as f64;
        for pos in range {
            values[pos] = inv;
        }
    }
    SparseOperator::new(pattern.clone(), values)
}

/// Materializes the shifted operator `A - I` (zero rows stay zero), with the
/// diagonal forced into the pattern. Every row sums to zero.
pub fn shift_operator(a: &SparseOperator) -> SparseOperator {
    let (pattern, remap) = a.pattern().with_diagonal();
    let pattern = Arc::new(pattern);
    let mut shifted = SparseOperator::zeros(pattern.clone());
    for (pos, &v) in a.values().iter().enumerate() {
        shifted.values_mut()[remap[pos]] = v;
    }
    for i in 0..pattern.n {
        if !a.pattern().row_is_empty(i) {
            let diag = pattern.find(i, i).expect("diagonal present");
            shifted.values_mut()[diag] -= 1.0;
        }
    }
    shifted
}

/// `A X - X` restricted to rows with edges: the action of the shifted
/// operator without materializing it.
pub fn apply_shifted(a: &SparseOperator, x: &NodeField) -> NodeField {
    let mut out = a.matvec(x);
    let xv = x.values();
    let d = x.channels();
    let pattern = a.pattern();
    {
        let ov = out.values_mut();
        for i in 0..pattern.n {
            if !pattern.row_is_empty(i) {
                for c in 0..d {
                    ov[(i, c)] -= xv[(i, c)];
                }
            }
        }
    }
    out
}

/// Max row-sum deviation from 1 over rows that have at least one edge.
pub fn row_stochastic_deviation(a: &SparseOperator) -> f64 {
    let mut worst = 0.0f64;
    for (i, s) in a.row_sums().iter().enumerate() {
        if !a.pattern().row_is_empty(i) {
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// Seeded uniform parameters for tests and untrained models.
pub fn seeded_uniform(rows: usize, cols: usize, half_width: f64, rng: &mut impl rand::Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-half_width..half_width))
}

pub fn seeded_uniform_vec(len: usize, half_width: f64, rng: &mut impl rand::Rng) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.gen_range(-half_width..half_width))
}
