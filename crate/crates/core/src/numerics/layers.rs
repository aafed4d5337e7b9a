//! The layer set used by the codecs and the language model.
//!
//! Layers own only [`ParamId`]s; values live in a [`ParamStore`] so a single
//! store can be checkpointed and optimized as a unit.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Anything that maps one tape value to another.
pub trait Layer {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var>;
}

fn check_cols(g: &Graph, x: Var, want: usize, op: &'static str) -> Result<usize> {
    match g.value(x).shape() {
        [n, c] if *c == want => Ok(*n),
        other => Err(Error::shape(op, format!("[rows, {want}]"), other)),
    }
}

/// `y = x W + b`, `x: [n, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add_uniform(format!("{name}.weight"), &[in_dim, out_dim], in_dim, rng),
            bias: store.add_uniform(format!("{name}.bias"), &[out_dim], in_dim, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: store.add_zeros(format!("{name}.weight"), &[in_dim, out_dim]),
            bias: store.add_zeros(format!("{name}.bias"), &[out_dim]),
            in_dim,
            out_dim,
        }
    }
}

impl Layer for Dense {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_cols(g, x, self.in_dim, "dense")?;
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Strided 1-D convolution over `[time, channels]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel * in_ch;
        Self {
            weight: store.add_uniform(format!("{name}.weight"), &[fan_in, out_ch], fan_in, rng),
            bias: store.add_uniform(format!("{name}.bias"), &[out_ch], fan_in, rng),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }
}

impl Layer for Conv1d {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_cols(g, x, self.in_ch, "conv1d")?;
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b, self.kernel, self.stride, self.padding)
    }
}

/// Transposed 1-D convolution (temporal upsampling by `stride`).
#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // Each output sample receives roughly kernel/stride taps.
        let fan_in = (in_ch * kernel / stride.max(1)).max(1);
        Self {
            weight: store.add_uniform(format!("{name}.weight"), &[in_ch, kernel * out_ch], fan_in, rng),
            bias: store.add_uniform(format!("{name}.bias"), &[out_ch], fan_in, rng),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }
}

impl Layer for ConvTranspose1d {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_cols(g, x, self.in_ch, "conv_transpose1d")?;
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose1d(x, w, b, self.kernel, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add_ones(format!("{name}.gamma"), &[dim]),
            beta: store.add_zeros(format!("{name}.beta"), &[dim]),
            dim,
        }
    }
}

impl Layer for LayerNorm {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_cols(g, x, self.dim, "layer_norm")?;
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.layer_norm(x, gm, bt)
    }
}

/// Lookup table initialized N(0, 0.02²).
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            table: store.add_normal(format!("{name}.table"), &[vocab, dim], 0.02, rng),
            vocab,
            dim,
        }
    }

    pub fn lookup(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let t = g.param(store, self.table);
        g.embedding(t, ids)
    }
}

/// Multi-head self-attention with input/output projections.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
    pub causal: bool,
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Dense::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Dense::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Dense::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Dense::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            causal,
        })
    }
}

impl Layer for SelfAttention {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let a = g.attention(q, k, v, self.heads, self.causal)?;
        self.output.forward(g, store, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Gelu => g.gelu(x),
        }
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: SelfAttention,
    pub ln_mlp: LayerNorm,
    pub fc_in: Dense,
    pub fc_out: Dense,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: SelfAttention::new(store, &format!("{name}.attn"), dim, heads, causal, rng)?,
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc_in: Dense::new(store, &format!("{name}.fc1"), dim, 4 * dim, rng),
            fc_out: Dense::new(store, &format!("{name}.fc2"), 4 * dim, dim, rng),
        })
    }
}

impl Layer for TransformerBlock {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ln_attn.forward(g, store, x)?;
        let h = self.attn.forward(g, store, h)?;
        let x = g.add(x, h)?;
        let h = self.ln_mlp.forward(g, store, x)?;
        let h = self.fc_in.forward(g, store, h)?;
        let h = g.gelu(h);
        let h = self.fc_out.forward(g, store, h)?;
        g.add(x, h)
    }
}
