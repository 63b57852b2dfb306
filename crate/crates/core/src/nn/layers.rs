//! Transformer building blocks bound onto a [`Tape`].
//!
//! Each block has an `init` that registers its parameters under a name prefix
//! and a `bind` that turns those names into tape variables for one forward.

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// MAC labels for attention-side matmuls. Everything under `attn.` plus
/// [`LABEL_MSG`] is what the attention cost model accounts for.
pub const LABEL_ATTN_PROJ: &str = "attn.proj";
pub const LABEL_ATTN_SCORES: &str = "attn.scores";
pub const LABEL_ATTN_MIX: &str = "attn.mix";
pub const LABEL_ATTN_PREFIX: &str = "attn.";
pub const LABEL_MSG: &str = "msg";
pub const LABEL_FFN: &str = "ffn";

/// Weight scale that keeps activations at unit variance through a projection.
pub fn fan_in_std(d_in: usize) -> f64 {
    1.0 / (d_in as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn init(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut Rng) {
        store.init_normal(&format!("{prefix}.w"), d_in, d_out, fan_in_std(d_in), rng);
        store.init_zeros(&format!("{prefix}.b"), 1, d_out);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            w: tape.param(store, &format!("{prefix}.w"))?,
            b: tape.param(store, &format!("{prefix}.b"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, label: &str) -> Result<Var> {
        let y = tape.matmul_labeled(x, self.w, label)?;
        tape.add_row(y, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize) {
        store.init_ones(&format!("{prefix}.g"), d);
        store.init_zeros(&format!("{prefix}.b"), 1, d);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: tape.param(store, &format!("{prefix}.g"))?,
            beta: tape.param(store, &format!("{prefix}.b"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gamma, self.beta, LN_EPS)
    }
}

/// Multi-head attention: Q/K/V projections, per-head scaled dot product with
/// scale `1/√(d/heads)`, concatenation and an output projection.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

/// Attention output together with the per-head probability matrices.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Var,
    pub probs: Vec<Var>,
}

impl Attention {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) {
        for name in ["q", "k", "v", "o"] {
            Linear::init(store, &format!("{prefix}.{name}"), d, d, rng);
        }
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::bind(tape, store, &format!("{prefix}.q"))?,
            k: Linear::bind(tape, store, &format!("{prefix}.k"))?,
            v: Linear::bind(tape, store, &format!("{prefix}.v"))?,
            o: Linear::bind(tape, store, &format!("{prefix}.o"))?,
            heads,
        })
    }

    pub fn forward(&self, tape: &mut Tape, q_src: Var, kv_src: Var) -> Result<Var> {
        Ok(self.forward_with_probs(tape, q_src, kv_src)?.out)
    }

    pub fn forward_with_probs(
        &self,
        tape: &mut Tape,
        q_src: Var,
        kv_src: Var,
    ) -> Result<AttentionOutput> {
        let d = tape.value(q_src).cols();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "model dim {d} not divisible by {} heads",
                self.heads
            )));
        }
        let dh = d / self.heads;
        let q = self.q.forward(tape, q_src, LABEL_ATTN_PROJ)?;
        let k = self.k.forward(tape, kv_src, LABEL_ATTN_PROJ)?;
        let v = self.v.forward(tape, kv_src, LABEL_ATTN_PROJ)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_bt(qh, kh, LABEL_ATTN_SCORES)?;
            let scores = tape.scale(scores, scale)?;
            let p = tape.softmax(scores)?;
            head_outs.push(tape.matmul_labeled(p, vh, LABEL_ATTN_MIX)?);
            probs.push(p);
        }
        let merged = if self.heads == 1 {
            head_outs[0]
        } else {
            tape.concat_cols(&head_outs)?
        };
        let out = self.o.forward(tape, merged, LABEL_ATTN_PROJ)?;
        Ok(AttentionOutput { out, probs })
    }
}

/// Two-layer GELU feed-forward with hidden width `4d`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) {
        Linear::init(store, &format!("{prefix}.fc1"), d, 4 * d, rng);
        Linear::init(store, &format!("{prefix}.fc2"), 4 * d, d, rng);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            fc1: Linear::bind(tape, store, &format!("{prefix}.fc1"))?,
            fc2: Linear::bind(tape, store, &format!("{prefix}.fc2"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x, LABEL_FFN)?;
        let h = tape.gelu(h)?;
        self.fc2.forward(tape, h, LABEL_FFN)
    }
}

/// Pre-norm self-attention + FFN block: `x + Attn(LN(x))`, then `+ FFN(LN(·))`.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) {
        LayerNorm::init(store, &format!("{prefix}.ln1"), d);
        Attention::init(store, &format!("{prefix}.attn"), d, rng);
        LayerNorm::init(store, &format!("{prefix}.ln2"), d);
        Mlp::init(store, &format!("{prefix}.mlp"), d, rng);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::bind(tape, store, &format!("{prefix}.ln1"))?,
            attn: Attention::bind(tape, store, &format!("{prefix}.attn"), heads)?,
            ln2: LayerNorm::bind(tape, store, &format!("{prefix}.ln2"))?,
            mlp: Mlp::bind(tape, store, &format!("{prefix}.mlp"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let x = self.attend(tape, x)?;
        self.feed_forward(tape, x)
    }

    /// Attention half only: `x + Attn(LN(x))`.
    pub fn attend(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = self.ln1.forward(tape, x)?;
        let a = self.attn.forward(tape, n, n)?;
        tape.add(x, a)
    }

    /// FFN half only: `x + FFN(LN(x))`.
    pub fn feed_forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = self.ln2.forward(tape, x)?;
        let f = self.mlp.forward(tape, n)?;
        tape.add(x, f)
    }
}
