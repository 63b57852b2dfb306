//! Video-conditioned text prompting: cross-attention from the text embedding
//! into the temporally averaged patch tokens, mixed back in by a learnable
//! scale `α`.

use crate::error::{Error, Result};
use crate::nn::layers::{Attention, Mlp};
use crate::nn::params::ParamStore;
use crate::tensor::{Rng, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptConfig {
    pub blocks: usize,
    pub alpha_init: f64,
    pub enabled: bool,
    /// One `α` per embedding dimension instead of a single scalar.
    pub per_dim_alpha: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            alpha_init: 0.1,
            enabled: true,
            per_dim_alpha: false,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && self.blocks == 0 {
            return Err(Error::Config("prompt.blocks must be at least 1".into()));
        }
        if !self.alpha_init.is_finite() {
            return Err(Error::Config("prompt.alpha_init must be finite".into()));
        }
        Ok(())
    }
}

/// `z̄`: elementwise mean over frames of the final patch tokens (`N × d` each).
pub fn video_content_mean(tape: &mut Tape, patch_tokens: &[Var]) -> Result<Var> {
    let (&first, rest) = patch_tokens
        .split_first()
        .ok_or_else(|| Error::invalid("no frames to average"))?;
    let mut acc = first;
    for &p in rest {
        acc = tape.add(acc, p)?;
    }
    tape.scale(acc, 1.0 / patch_tokens.len() as f64)
}

/// `ĉ = c + α·c̃`. `alpha` is `1 × 1` or `1 × d`.
pub fn enhance(tape: &mut Tape, c: Var, c_tilde: Var, alpha: Var) -> Result<Var> {
    let scaled = if tape.value(alpha).len() == 1 {
        tape.mul_scalar(c_tilde, alpha)?
    } else {
        tape.mul_row(c_tilde, alpha)?
    };
    tape.add(c, scaled)
}

#[derive(Debug, Clone)]
pub struct PromptGenerator {
    pub alpha: Var,
    blocks: Vec<(Attention, Mlp)>,
}

impl PromptGenerator {
    pub fn init(cfg: &PromptConfig, dim: usize, store: &mut ParamStore, rng: &mut Rng) {
        if cfg.per_dim_alpha {
            store.insert(
                "prompt.alpha",
                crate::tensor::Tensor::full(&[1, dim], cfg.alpha_init),
                crate::nn::Origin::Fresh,
            );
        } else {
            store.init_const("prompt.alpha", cfg.alpha_init);
        }
        for b in 0..cfg.blocks {
            Attention::init(store, &format!("prompt.blocks.{b}.attn"), dim, rng);
            Mlp::init(store, &format!("prompt.blocks.{b}.mlp"), dim, rng);
        }
    }

    pub fn bind(
        tape: &mut Tape,
        store: &ParamStore,
        cfg: &PromptConfig,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            alpha: tape.param(store, "prompt.alpha")?,
            blocks: (0..cfg.blocks)
                .map(|b| {
                    Ok((
                        Attention::bind(tape, store, &format!("prompt.blocks.{b}.attn"), heads)?,
                        Mlp::bind(tape, store, &format!("prompt.blocks.{b}.mlp"))?,
                    ))
                })
                .collect::<Result<_>>()?,
        })
    }

    /// `c̃` for every row of `c` (`K × d`), each row an independent single-token
    /// query against `z̄`. Per block: `c̄ = c + MHA(c, z̄)`, `c̃ = c̄ + FFN(c̄)`.
    pub fn prompts(&self, tape: &mut Tape, c: Var, zbar: Var) -> Result<Var> {
        let mut x = c;
        for (attn, mlp) in &self.blocks {
            let a = attn.forward(tape, x, zbar)?;
            let c_bar = tape.add(x, a)?;
            let f = mlp.forward(tape, c_bar)?;
            x = tape.add(c_bar, f)?;
        }
        Ok(x)
    }

    /// `ĉ` for every row of `c`.
    pub fn enhance(&self, tape: &mut Tape, c: Var, zbar: Var) -> Result<Var> {
        let c_tilde = self.prompts(tape, c, zbar)?;
        enhance(tape, c, c_tilde, self.alpha)
    }
}
