//! Attention cost model: closed-form multiply-accumulate counts for four
//! space-time attention layouts, checked against instrumented forwards.
//!
//! Only attention blocks (and the message projection of the cross-frame
//! layout) are counted. Patch embedding, norms, FFNs and heads are out of scope.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::nn::layers::{Block, LABEL_ATTN_PREFIX, LABEL_MSG};
use crate::nn::params::ParamStore;
use crate::tensor::{Rng, Tape, Tensor};
use crate::video::{CctBlock, CctOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttnKind {
    Spatial,
    Joint,
    Divided,
    CrossFrame,
}

impl AttnKind {
    pub const ALL: [AttnKind; 4] = [
        AttnKind::Spatial,
        AttnKind::Joint,
        AttnKind::Divided,
        AttnKind::CrossFrame,
    ];

    /// Whether an instrumented forward exists for this layout.
    pub fn instrumented(self) -> bool {
        !matches!(self, AttnKind::Divided)
    }
}

impl fmt::Display for AttnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttnKind::Spatial => "spatial",
            AttnKind::Joint => "joint",
            AttnKind::Divided => "divided",
            AttnKind::CrossFrame => "cross_frame",
        })
    }
}

/// Extents of a video attention stack: `T` frames of `N` patches (+1 CLS).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostShape {
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
}

impl CostShape {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0
            || self.patches == 0
            || self.dim == 0
            || self.heads == 0
            || self.layers == 0
        {
            return Err(Error::invalid(format!(
                "cost extents must be positive: {self:?}"
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// One self-attention over `S` tokens of width `d`: four projections plus
/// scores and the weighted sum, and `8·S·d²` more with the FFN.
pub fn macs_attention(s: u64, d: u64, with_ffn: bool) -> u64 {
    4 * s * d * d + 2 * s * s * d + if with_ffn { 8 * s * d * d } else { 0 }
}

pub fn macs_variant(kind: AttnKind, shape: &CostShape) -> u64 {
    let (t, n, d) = (shape.frames as u64, shape.patches as u64, shape.dim as u64);
    let a = |s| macs_attention(s, d, false);
    let per_layer = match kind {
        AttnKind::Spatial => t * a(n + 1),
        AttnKind::Joint => a(t * (n + 1)),
        AttnKind::Divided => (n + 1) * a(t) + t * a(n + 1),
        AttnKind::CrossFrame => a(t) + t * a(n + 2) + t * d * d,
    };
    per_layer * shape.layers as u64
}

/// Runs `layers` attention layers of the given layout on random tokens and
/// returns the MACs the tape recorded under attention and message labels.
pub fn instrumented_macs(
    kind: AttnKind,
    shape: &CostShape,
    layers: usize,
    seed: u64,
) -> Result<u64> {
    shape.validate()?;
    let (t, s, d) = (shape.frames, shape.patches + 1, shape.dim);
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    for l in 0..layers {
        let p = format!("cost.{l}");
        Block::init(&mut store, &p, d, &mut rng);
        if kind == AttnKind::CrossFrame {
            CctBlock::init_fresh(&mut store, &p, d, &mut rng);
        }
    }
    let mut tape = Tape::with_counter();
    let mut frames = (0..t)
        .map(|_| {
            let data = (0..s * d).map(|_| rng.normal()).collect();
            tape.constant(Tensor::matrix(s, d, data)?)
        })
        .collect::<Result<Vec<_>>>()?;
    for l in 0..layers {
        let p = format!("cost.{l}");
        match kind {
            AttnKind::Spatial => {
                let block = Block::bind(&mut tape, &store, &p, shape.heads)?;
                for f in frames.iter_mut() {
                    *f = block.attend(&mut tape, *f)?;
                }
            }
            AttnKind::Joint => {
                let block = Block::bind(&mut tape, &store, &p, shape.heads)?;
                let all = if t == 1 {
                    frames[0]
                } else {
                    tape.concat_rows(&frames)?
                };
                let out = block.attend(&mut tape, all)?;
                for (i, f) in frames.iter_mut().enumerate() {
                    *f = tape.slice_rows(out, i * s, s)?;
                }
            }
            AttnKind::CrossFrame => {
                let block = CctBlock::bind(&mut tape, &store, &p, shape.heads)?;
                frames = block.forward_with(
                    &mut tape,
                    &frames,
                    CctOptions {
                        skip_ffn: true,
                        message_override: None,
                    },
                )?;
            }
            AttnKind::Divided => {
                return Err(Error::invalid(
                    "divided attention has no instrumented forward",
                ))
            }
        }
    }
    let c = tape.macs();
    Ok(c.sum_prefix(LABEL_ATTN_PREFIX) + c.get(LABEL_MSG))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub kind: AttnKind,
    pub shape: CostShape,
    pub analytic: u64,
    pub instrumented: Option<u64>,
    pub ratio_vs_cross_frame: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

/// How instrumented columns are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instrument {
    Off,
    /// Run every layer.
    Full,
    /// Run one layer and scale by `L`; layers are identical in cost.
    OneLayer,
}

impl CostReport {
    /// Rows for every layout at every frame count in `frame_counts`.
    pub fn build(base: &CostShape, frame_counts: &[usize], instrument: Instrument) -> Result<Self> {
        let mut rows = Vec::new();
        for &t in frame_counts {
            let shape = CostShape { frames: t, ..*base };
            shape.validate()?;
            let cross = macs_variant(AttnKind::CrossFrame, &shape) as f64;
            for kind in AttnKind::ALL {
                let analytic = macs_variant(kind, &shape);
                let instrumented = match instrument {
                    _ if !kind.instrumented() => None,
                    Instrument::Off => None,
                    Instrument::Full => Some(instrumented_macs(kind, &shape, shape.layers, 0)?),
                    Instrument::OneLayer => {
                        Some(instrumented_macs(kind, &shape, 1, 0)? * shape.layers as u64)
                    }
                };
                rows.push(CostRow {
                    kind,
                    shape,
                    analytic,
                    instrumented,
                    ratio_vs_cross_frame: analytic as f64 / cross,
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn get(&self, kind: AttnKind, frames: usize) -> Option<&CostRow> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.shape.frames == frames)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(
            out,
            "# attention-only multiply-accumulates (QKV/output projections, scores, weighted sum, message projection); \
             patch embedding, norms and FFN excluded; divided is analytic only"
        )?;
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record([
            "variant",
            "T",
            "N",
            "d",
            "L",
            "analytic_macs",
            "instrumented_macs",
            "ratio_vs_cross_frame",
        ])
        .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.kind.to_string(),
                r.shape.frames.to_string(),
                r.shape.patches.to_string(),
                r.shape.dim.to_string(),
                r.shape.layers.to_string(),
                r.analytic.to_string(),
                r.instrumented.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.6}", r.ratio_vs_cross_frame),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_unit_width() {
        assert_eq!(macs_attention(1, 1, false), 6);
        assert_eq!(macs_attention(1, 1, true), 14);
    }

    #[test]
    fn one_frame_overhead() {
        let shape = CostShape {
            frames: 1,
            patches: 49,
            dim: 16,
            heads: 2,
            layers: 1,
        };
        let d = 16u64;
        let extra =
            macs_variant(AttnKind::CrossFrame, &shape) - macs_variant(AttnKind::Spatial, &shape);
        // CFA over one token, message projection, and one extra IFA token
        let ifa_extra = macs_attention(51, d, false) - macs_attention(50, d, false);
        assert_eq!(extra, (4 * d * d + 2 * d) + d * d + ifa_extra);
    }

    #[test]
    fn instrumented_matches_small() {
        let shape = CostShape {
            frames: 3,
            patches: 4,
            dim: 8,
            heads: 2,
            layers: 2,
        };
        for kind in [AttnKind::Spatial, AttnKind::Joint, AttnKind::CrossFrame] {
            assert_eq!(
                instrumented_macs(kind, &shape, 2, 1).unwrap(),
                macs_variant(kind, &shape),
                "{kind}"
            );
        }
        assert!(instrumented_macs(AttnKind::Divided, &shape, 1, 0).is_err());
    }
}
