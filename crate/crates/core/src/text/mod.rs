//! Byte-level text tower: tokenizer, prompt templates and a small bidirectional
//! transformer pooled at the EOS position.

use crate::error::{Error, Result};
use crate::nn::layers::{fan_in_std, Block, LayerNorm};
use crate::nn::params::{ParamStore, EMBED_STD};
use crate::tensor::{Rng, Tape, Var};

pub const BOS: usize = 256;
pub const EOS: usize = 257;
pub const PAD: usize = 258;
pub const VOCAB_SIZE: usize = 259;

pub const PLACEHOLDER: &str = "{label}";

const BUILTIN_TEMPLATES: &str = include_str!("templates.txt");

/// Byte alphabet plus BOS/EOS/PAD with a fixed sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub max_len: usize,
}

impl Vocab {
    pub fn new(max_len: usize) -> Result<Self> {
        if max_len < 3 {
            return Err(Error::Config(format!(
                "text length {max_len} leaves no room for content"
            )));
        }
        Ok(Self { max_len })
    }

    /// `BOS, bytes…, EOS, PAD…` of length `max_len`. Content longer than
    /// `max_len − 2` bytes is truncated so EOS is always present.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        if text.is_empty() {
            return Err(Error::invalid("cannot tokenize empty text"));
        }
        let keep = text.len().min(self.max_len - 2);
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(BOS);
        ids.extend(text.as_bytes()[..keep].iter().map(|&b| b as usize));
        ids.push(EOS);
        ids.resize(self.max_len, PAD);
        Ok(ids)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        let bytes: Vec<u8> = ids.iter().filter(|&&i| i < 256).map(|&i| i as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Substitutes `label` for the single `{label}` in `template`.
pub fn expand_template(label: &str, template: &str) -> Result<String> {
    match template.matches(PLACEHOLDER).count() {
        1 => Ok(template.replacen(PLACEHOLDER, label, 1)),
        n => Err(Error::invalid(format!(
            "template `{template}` has {n} placeholders, expected 1"
        ))),
    }
}

/// Parses a template list: one template per non-blank line.
pub fn parse_templates(text: &str) -> Result<Vec<String>> {
    let out: Vec<String> = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    for t in &out {
        expand_template("x", t)?;
    }
    Ok(out)
}

/// The sixteen hand-written action templates.
pub fn builtin_templates() -> Vec<String> {
    parse_templates(BUILTIN_TEMPLATES).expect("bundled templates are well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub max_len: usize,
}

/// Bound text tower.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub vocab: Vocab,
    tok_emb: Var,
    pos: Var,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    proj: Var,
}

impl TextEncoder {
    pub fn init(cfg: &TextConfig, store: &mut ParamStore, rng: &mut Rng) {
        store.init_normal("text.tok_emb", VOCAB_SIZE, cfg.dim, EMBED_STD, rng);
        store.init_normal("text.pos", cfg.max_len, cfg.dim, EMBED_STD, rng);
        for l in 0..cfg.depth {
            Block::init(store, &format!("text.blocks.{l}"), cfg.dim, rng);
        }
        LayerNorm::init(store, "text.ln_final", cfg.dim);
        store.init_normal("text.proj", cfg.dim, cfg.dim, fan_in_std(cfg.dim), rng);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, cfg: &TextConfig) -> Result<Self> {
        Ok(Self {
            vocab: Vocab::new(cfg.max_len)?,
            tok_emb: tape.param(store, "text.tok_emb")?,
            pos: tape.param(store, "text.pos")?,
            blocks: (0..cfg.depth)
                .map(|l| Block::bind(tape, store, &format!("text.blocks.{l}"), cfg.heads))
                .collect::<Result<_>>()?,
            ln_final: LayerNorm::bind(tape, store, "text.ln_final")?,
            proj: tape.param(store, "text.proj")?,
        })
    }

    /// `c` for one string, `1 × d`. Padding positions are not fed to the
    /// transformer, which is equivalent to masking them out.
    pub fn encode(&self, tape: &mut Tape, text: &str) -> Result<Var> {
        let ids = self.vocab.tokenize(text)?;
        let len = ids
            .iter()
            .position(|&i| i == EOS)
            .expect("tokenize always emits EOS")
            + 1;
        let tok = tape.gather_rows(self.tok_emb, &ids[..len])?;
        let pos = tape.slice_rows(self.pos, 0, len)?;
        let mut x = tape.add(tok, pos)?;
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        let eos_state = tape.slice_rows(x, len - 1, 1)?;
        let n = self.ln_final.forward(tape, eos_state)?;
        tape.matmul(n, self.proj)
    }

    /// One row per text, `K × d`.
    pub fn encode_all(&self, tape: &mut Tape, texts: &[String]) -> Result<Var> {
        if texts.is_empty() {
            return Err(Error::invalid("no texts to encode"));
        }
        let rows: Vec<Var> = texts
            .iter()
            .map(|t| self.encode(tape, t))
            .collect::<Result<_>>()?;
        if rows.len() == 1 {
            return Ok(rows[0]);
        }
        tape.concat_rows(&rows)
    }

    /// Mean embedding of `label` over every template. Templates are visited in
    /// sorted order, so the result does not depend on the order given.
    pub fn encode_ensemble(
        &self,
        tape: &mut Tape,
        label: &str,
        templates: &[String],
    ) -> Result<Var> {
        if templates.is_empty() {
            return Err(Error::invalid("empty template list"));
        }
        let mut sorted: Vec<&String> = templates.iter().collect();
        sorted.sort();
        let rows: Vec<Var> = sorted
            .iter()
            .map(|t| {
                let text = expand_template(label, t)?;
                self.encode(tape, &text)
            })
            .collect::<Result<_>>()?;
        let stacked = if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat_rows(&rows)?
        };
        tape.mean_rows(stacked)
    }
}
