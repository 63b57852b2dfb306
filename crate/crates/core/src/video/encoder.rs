use super::clip::{patchify, VideoClip};
use crate::error::{Error, Result};
use crate::nn::layers::{fan_in_std, Attention, Block, LayerNorm, Linear, LABEL_MSG};
use crate::nn::params::{Origin, ParamStore, EMBED_STD, INIT_STD};
use crate::tensor::{Rng, Tape, Tensor, Var};

pub const LABEL_EMBED: &str = "embed";

/// Shape of the video tower.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub cct_depth: usize,
    pub mit_depth: usize,
    pub heads: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.patch == 0 || self.dim == 0 || self.heads == 0 {
            return Err(Error::Config(
                "frames, patch, dim and heads must be positive".into(),
            ));
        }
        if !self.height.is_multiple_of(self.patch)
            || !self.width.is_multiple_of(self.patch)
            || self.height == 0
            || self.width == 0
        {
            return Err(Error::Config(format!(
                "frame {}×{} not divisible by patch {}",
                self.height, self.width, self.patch
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.cct_depth == 0 {
            return Err(Error::Config("cct depth must be at least 1".into()));
        }
        Ok(())
    }

    /// `N = HW/P²`.
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch * self.patch
    }
}

/// Patch projection, class token and spatial position table.
#[derive(Debug, Clone, Copy)]
pub struct FrameEmbedding {
    pub proj: Var,
    pub class: Var,
    pub pos: Var,
}

impl FrameEmbedding {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            proj: tape.param(store, "visual.embed.proj")?,
            class: tape.param(store, "visual.embed.class")?,
            pos: tape.param(store, "visual.embed.pos")?,
        })
    }
}

/// `[x_class; patches·E] + e_spa`, giving `(N+1) × d` tokens with CLS first.
pub fn embed_frame(tape: &mut Tape, patches: Var, emb: &FrameEmbedding) -> Result<Var> {
    let projected = tape.matmul_labeled(patches, emb.proj, LABEL_EMBED)?;
    let tokens = tape.concat_rows(&[emb.class, projected])?;
    tape.add(tokens, emb.pos)
}

/// Pixel normalization applied to patches before projection.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Per-frame token sequences of a clip matching `cfg`; pixels are normalized
/// with [`PIXEL_MEAN`] and [`PIXEL_STD`].
pub fn embed_clip(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    emb: &FrameEmbedding,
    clip: &VideoClip,
) -> Result<Vec<Var>> {
    if clip.len() != cfg.frames {
        return Err(Error::shape(format!(
            "clip has {} frames, encoder expects {}",
            clip.len(),
            cfg.frames
        )));
    }
    clip.frames
        .iter()
        .map(|f| {
            if f.height != cfg.height || f.width != cfg.width {
                return Err(Error::shape(format!(
                    "frame {}×{} but encoder expects {}×{}",
                    f.height, f.width, cfg.height, cfg.width
                )));
            }
            let mut patches = patchify(f, cfg.patch)?;
            for v in patches.data_mut() {
                *v = (*v - PIXEL_MEAN) / PIXEL_STD;
            }
            let patches = tape.constant(patches)?;
            embed_frame(tape, patches, emb)
        })
        .collect()
}

/// One message per frame: a linear map of that frame's CLS token.
pub fn make_messages(tape: &mut Tape, cls_tokens: Var, msg: &Linear) -> Result<Var> {
    msg.forward(tape, cls_tokens, LABEL_MSG)
}

/// Cross-frame communication block. The IFA attention and FFN live under the
/// same names as a plain image transformer block, so image weights drop in.
#[derive(Debug, Clone, Copy)]
pub struct CctBlock {
    pub msg: Linear,
    pub cfa_ln: LayerNorm,
    pub cfa: Attention,
    pub frame: Block,
}

/// Knobs for probing a CCT block.
#[derive(Debug, Clone, Copy, Default)]
pub struct CctOptions<'a> {
    /// Skip the FFN half (cost accounting of attention only).
    pub skip_ffn: bool,
    /// Replaces each frame's post-IFA message state before it is dropped.
    pub message_override: Option<&'a [Tensor]>,
}

impl CctBlock {
    pub fn init_fresh(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) {
        Linear::init(store, &format!("{prefix}.msg"), d, d, rng);
        LayerNorm::init(store, &format!("{prefix}.cfa_ln"), d);
        Attention::init(store, &format!("{prefix}.cfa"), d, rng);
        // zero output projection: M̂ = M until CFA learns something
        store.init_zeros(&format!("{prefix}.cfa.o.w"), d, d);
        store.init_zeros(&format!("{prefix}.cfa.o.b"), 1, d);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            msg: Linear::bind(tape, store, &format!("{prefix}.msg"))?,
            cfa_ln: LayerNorm::bind(tape, store, &format!("{prefix}.cfa_ln"))?,
            cfa: Attention::bind(tape, store, &format!("{prefix}.cfa"), heads)?,
            frame: Block::bind(tape, store, prefix, heads)?,
        })
    }

    /// `M̂ = M + CFA(LN(M))` over the `T × d` message matrix.
    pub fn fuse(&self, tape: &mut Tape, messages: Var) -> Result<Var> {
        let n = self.cfa_ln.forward(tape, messages)?;
        let a = self.cfa.forward(tape, n, n)?;
        tape.add(messages, a)
    }

    pub fn forward(&self, tape: &mut Tape, frames: &[Var]) -> Result<Vec<Var>> {
        self.forward_with(tape, frames, CctOptions::default())
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape,
        frames: &[Var],
        opts: CctOptions<'_>,
    ) -> Result<Vec<Var>> {
        if frames.is_empty() {
            return Err(Error::shape("cct block needs at least one frame"));
        }
        let tokens = tape.value(frames[0]).rows();
        let cls: Vec<Var> = frames
            .iter()
            .map(|&z| tape.slice_rows(z, 0, 1))
            .collect::<Result<_>>()?;
        let cls = tape.concat_rows(&cls)?;
        let messages = make_messages(tape, cls, &self.msg)?;
        let fused = self.fuse(tape, messages)?;

        let mut out = Vec::with_capacity(frames.len());
        for (t, &z) in frames.iter().enumerate() {
            let m_hat = tape.slice_rows(fused, t, 1)?;
            let seq = tape.concat_rows(&[z, m_hat])?;
            let mut diffused = self.frame.attend(tape, seq)?;
            if let Some(over) = opts.message_override {
                let frame_part = tape.slice_rows(diffused, 0, tokens)?;
                let fake = tape.constant(over[t].clone())?;
                diffused = tape.concat_rows(&[frame_part, fake])?;
            }
            // message token dropped here
            let z_hat = tape.slice_rows(diffused, 0, tokens)?;
            out.push(if opts.skip_ffn {
                z_hat
            } else {
                self.frame.feed_forward(tape, z_hat)?
            });
        }
        Ok(out)
    }
}

/// Temporal integration transformer with its position table.
#[derive(Debug, Clone)]
pub struct Mit {
    pub pos: Var,
    pub blocks: Vec<Block>,
}

impl Mit {
    pub fn init(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut Rng) {
        store.init_normal("mit.pos", cfg.frames, cfg.dim, INIT_STD, rng);
        for l in 0..cfg.mit_depth {
            Block::init(store, &format!("mit.blocks.{l}"), cfg.dim, rng);
        }
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            pos: tape.param(store, "mit.pos")?,
            blocks: (0..cfg.mit_depth)
                .map(|l| Block::bind(tape, store, &format!("mit.blocks.{l}"), cfg.heads))
                .collect::<Result<_>>()?,
        })
    }
}

/// `v = mean_T(MIT(H + e_temp))`, as a `1 × d` row.
pub fn encode_video(
    tape: &mut Tape,
    frame_repr: Var,
    e_temp: Var,
    blocks: &[Block],
) -> Result<Var> {
    let mut x = tape.add(frame_repr, e_temp)?;
    for b in blocks {
        x = b.forward(tape, x)?;
    }
    tape.mean_rows(x)
}

/// Frame-level outputs of the communication stack.
#[derive(Debug, Clone)]
pub struct FrameEncoding {
    /// `T × d` stacked final CLS states `h_t`.
    pub cls: Var,
    /// Final `(N+1) × d` token states per frame.
    pub tokens: Vec<Var>,
}

impl FrameEncoding {
    /// Final patch tokens of frame `t` (CLS excluded), `N × d`.
    pub fn patch_tokens(&self, tape: &mut Tape, t: usize) -> Result<Var> {
        let rows = tape.value(self.tokens[t]).rows();
        tape.slice_rows(self.tokens[t], 1, rows - 1)
    }
}

/// Bound video tower.
#[derive(Debug, Clone)]
pub struct VideoEncoder {
    pub cfg: EncoderConfig,
    pub embed: FrameEmbedding,
    pub blocks: Vec<CctBlock>,
    pub mit: Mit,
}

impl VideoEncoder {
    /// Parameters of the plain image transformer the video tower extends.
    pub fn init_image_params(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut Rng) {
        let d = cfg.dim;
        store.init_normal(
            "visual.embed.proj",
            cfg.patch_dim(),
            d,
            fan_in_std(cfg.patch_dim()),
            rng,
        );
        store.init_normal("visual.embed.class", 1, d, EMBED_STD, rng);
        store.init_normal("visual.embed.pos", cfg.num_patches() + 1, d, EMBED_STD, rng);
        for l in 0..cfg.cct_depth {
            Block::init(store, &format!("visual.blocks.{l}"), d, rng);
        }
    }

    /// Parameters only the video tower has: messages, CFA, MIT.
    pub fn init_video_params(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut Rng) {
        for l in 0..cfg.cct_depth {
            CctBlock::init_fresh(store, &format!("visual.blocks.{l}"), cfg.dim, rng);
        }
        Mit::init(store, cfg, rng);
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            cfg: *cfg,
            embed: FrameEmbedding::bind(tape, store)?,
            blocks: (0..cfg.cct_depth)
                .map(|l| CctBlock::bind(tape, store, &format!("visual.blocks.{l}"), cfg.heads))
                .collect::<Result<_>>()?,
            mit: Mit::bind(tape, store, cfg)?,
        })
    }

    pub fn embed_clip(&self, tape: &mut Tape, clip: &VideoClip) -> Result<Vec<Var>> {
        embed_clip(tape, &self.cfg, &self.embed, clip)
    }

    /// Embedding followed by every CCT block.
    pub fn encode_frames(&self, tape: &mut Tape, clip: &VideoClip) -> Result<FrameEncoding> {
        let mut z = self.embed_clip(tape, clip)?;
        for b in &self.blocks {
            z = b.forward(tape, &z)?;
        }
        let cls: Vec<Var> = z
            .iter()
            .map(|&t| tape.slice_rows(t, 0, 1))
            .collect::<Result<_>>()?;
        let cls = tape.concat_rows(&cls)?;
        Ok(FrameEncoding { cls, tokens: z })
    }

    /// Video representation `v` (`1 × d`) plus the frame-level encoding.
    pub fn encode(&self, tape: &mut Tape, clip: &VideoClip) -> Result<(Var, FrameEncoding)> {
        let frames = self.encode_frames(tape, clip)?;
        let v = encode_video(tape, frames.cls, self.mit.pos, &self.mit.blocks)?;
        Ok((v, frames))
    }
}

/// Builds video-tower parameters from an image transformer: embeddings, IFA
/// attention and FFN are copied verbatim and tagged inherited; message linear,
/// CFA (with zeroed output projection), MIT and `e_temp` are fresh.
pub fn init_from_image_weights(
    cfg: &EncoderConfig,
    image_cfg: &EncoderConfig,
    image: &ParamStore,
    rng: &mut Rng,
) -> Result<ParamStore> {
    cfg.validate()?;
    if (cfg.cct_depth, cfg.dim, cfg.heads, cfg.patch)
        != (
            image_cfg.cct_depth,
            image_cfg.dim,
            image_cfg.heads,
            image_cfg.patch,
        )
    {
        return Err(Error::shape(format!(
            "image encoder (L={}, d={}, heads={}, P={}) does not match video encoder (L={}, d={}, heads={}, P={})",
            image_cfg.cct_depth, image_cfg.dim, image_cfg.heads, image_cfg.patch, cfg.cct_depth, cfg.dim, cfg.heads, cfg.patch
        )));
    }
    let mut expected = ParamStore::new();
    VideoEncoder::init_image_params(cfg, &mut expected, &mut Rng::new(0));
    let mut out = ParamStore::new();
    for (name, p) in expected.iter() {
        let src = image.get(name)?;
        if src.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "image weight `{name}` has shape {:?}, expected {:?}",
                src.shape(),
                p.value.shape()
            )));
        }
        out.insert(name, src.clone(), Origin::Inherited);
    }
    VideoEncoder::init_video_params(cfg, &mut out, rng);
    Ok(out)
}
