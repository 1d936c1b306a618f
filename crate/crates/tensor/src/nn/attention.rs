use rand::Rng;

use crate::error::{contract, Result};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_full(format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.add_full(format!("{name}.beta"), &[dim], 0.0)?,
            dim,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Result of a multi-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// Output projection of the concatenated heads, or the concatenation
    /// itself when the block has no output projection.
    pub output: Var,
    /// Concatenated per-head results; column block `h` is head `h`.
    /// Also the node holding the attention probabilities.
    pub heads: Var,
}

/// Multi-head self-attention with a fused QKV projection. Scores are scaled
/// by `1/√head_dim`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub out: Option<Linear>,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        with_output: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(contract(
                "multi_head_attention",
                format!("d_model {d_model} not divisible by {heads} heads"),
            ));
        }
        let qkv = Linear::new(store, &format!("{name}.qkv"), d_model, 3 * d_model, rng)?;
        let out = if with_output {
            Some(Linear::new(store, &format!("{name}.out"), d_model, d_model, rng)?)
        } else {
            None
        };
        Ok(Self {
            qkv,
            out,
            heads,
            d_model,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Self-attention within each `(start, len)` segment of the rows of `x`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        segments: &[(usize, usize)],
    ) -> Result<AttentionOutput> {
        let qkv = self.qkv.forward(tape, x)?;
        let d = self.d_model;
        let q = tape.slice_cols(qkv, 0, d)?;
        let k = tape.slice_cols(qkv, d, d)?;
        let v = tape.slice_cols(qkv, 2 * d, d)?;
        let heads = tape.attention(q, k, v, segments, self.heads)?;
        let output = match &self.out {
            Some(out) => out.forward(tape, heads)?,
            None => heads,
        };
        Ok(AttentionOutput { output, heads })
    }

    /// Head `h`'s output, `rows × head_dim`, before concatenation.
    pub fn head<T: Real>(&self, tape: &mut Tape<'_, T>, attn: &AttentionOutput, h: usize) -> Result<Var> {
        let hd = self.head_dim();
        tape.slice_cols(attn.heads, h * hd, hd)
    }
}

/// Pre-norm encoder layer: `x + MHA(LN(x))`, then `+ FFN(LN(·))` with a ReLU
/// feed-forward.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, heads, true, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, d_ff, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d_model, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let n1 = self.ln1.forward(tape, x)?;
        let a = self.attn.forward(tape, n1, segments)?;
        let x = tape.add(x, a.output)?;
        let n2 = self.ln2.forward(tape, x)?;
        let h = self.ff1.forward(tape, n2)?;
        let h = tape.relu(h);
        let h = self.ff2.forward(tape, h)?;
        tape.add(x, h)
    }
}
