use crate::contrastive::{
    contrastive_loss, init_logit_scale, similarity_row, ClassifierHead, LOGIT_SCALE,
};
use crate::error::{Error, Result};
use crate::nn::layers::Block;
use crate::nn::params::{Origin, ParamStore};
use crate::prompt::{video_content_mean, PromptConfig, PromptGenerator};
use crate::tensor::{Rng, Tape, Tensor, Var};
use crate::text::{TextConfig, TextEncoder};
use crate::train::{HeadMode, ModelMode};
use crate::video::{
    embed_clip, init_from_image_weights, EncoderConfig, FrameEmbedding, VideoClip, VideoEncoder,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub text: TextConfig,
    pub prompt: PromptConfig,
    pub mode: ModelMode,
    pub head: HeadMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.text.dim != self.encoder.dim || self.text.heads != self.encoder.heads {
            return Err(Error::Config(
                "text tower must share width and heads with the video tower".into(),
            ));
        }
        self.prompt.validate()
    }

    /// Prompting only exists on the cross-frame model with a text head.
    pub fn prompting(&self) -> bool {
        self.mode == ModelMode::Xclip && self.head == HeadMode::Text && self.prompt.enabled
    }
}

/// Whether a parameter name belongs to a module without image/text ancestry.
pub fn origin_for(name: &str) -> Origin {
    // the temperature belongs to the inherited image-text pairing
    let fresh_top = ["mit.", "prompt.", "head."]
        .iter()
        .any(|p| name.starts_with(p));
    let fresh_block = name.strip_prefix("visual.blocks.").is_some_and(|rest| {
        let sub = rest.split_once('.').map_or("", |(_, s)| s);
        sub.starts_with("msg.") || sub.starts_with("cfa.") || sub.starts_with("cfa_ln.")
    });
    if fresh_top || fresh_block {
        Origin::Fresh
    } else {
        Origin::Inherited
    }
}

fn retag(store: &mut ParamStore, origin: Origin) {
    for (_, p) in store.iter_mut() {
        p.origin = origin;
    }
}

fn retag_one(store: &mut ParamStore, name: &str, origin: Origin) {
    if let Some((_, p)) = store.iter_mut().find(|(n, _)| *n == name) {
        p.origin = origin;
    }
}

/// Parameters plus the label vocabulary they were trained on.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub labels: Vec<String>,
    pub params: ParamStore,
}

impl Model {
    /// Stand-in image and text towers (random, tagged inherited) extended with
    /// fresh video-only, prompting, temperature and head parameters.
    pub fn init(cfg: &ModelConfig, labels: &[String], seed: u64) -> Result<Self> {
        cfg.validate()?;
        if labels.is_empty() {
            return Err(Error::invalid("model needs at least one label"));
        }
        let mut image = ParamStore::new();
        VideoEncoder::init_image_params(&cfg.encoder, &mut image, &mut Rng::derive(seed, 1));
        retag(&mut image, Origin::Inherited);
        let mut rng = Rng::derive(seed, 2);
        let mut params = match cfg.mode {
            ModelMode::Xclip => {
                init_from_image_weights(&cfg.encoder, &cfg.encoder, &image, &mut rng)?
            }
            ModelMode::ClipMean | ModelMode::ClipJoint => image,
        };
        match cfg.head {
            HeadMode::Text => {
                let mut text = ParamStore::new();
                TextEncoder::init(&cfg.text, &mut text, &mut Rng::derive(seed, 3));
                retag(&mut text, Origin::Inherited);
                params.extend(text);
                init_logit_scale(&mut params);
                retag_one(&mut params, LOGIT_SCALE, Origin::Inherited);
                if cfg.prompting() {
                    PromptGenerator::init(&cfg.prompt, cfg.encoder.dim, &mut params, &mut rng);
                }
            }
            HeadMode::Linear => {
                ClassifierHead::init(&mut params, cfg.encoder.dim, labels.len(), &mut rng)
            }
        }
        Ok(Self {
            cfg: *cfg,
            labels: labels.to_vec(),
            params,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        Bound::bind(tape, &self.cfg, &self.params)
    }

    /// Names frozen by the image/text freeze switches.
    pub fn frozen(&self, freeze_image: bool, freeze_text: bool) -> Vec<String> {
        self.params
            .iter()
            .filter(|(n, p)| {
                (freeze_image && n.starts_with("visual.") && p.origin == Origin::Inherited)
                    || (freeze_text && n.starts_with("text."))
            })
            .map(|(n, _)| n.to_string())
            .collect()
    }

    /// Label embeddings `c` (`K × d`) as plain values: one row per label,
    /// averaged over `templates` when given.
    pub fn text_embeddings(
        &self,
        labels: &[String],
        templates: Option<&[String]>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let text = TextEncoder::bind(&mut tape, &self.params, &self.cfg.text)?;
        let c = match templates {
            None => text.encode_all(&mut tape, labels)?,
            Some(ts) => {
                let rows: Vec<Var> = labels
                    .iter()
                    .map(|l| text.encode_ensemble(&mut tape, l, ts))
                    .collect::<Result<_>>()?;
                if rows.len() == 1 {
                    rows[0]
                } else {
                    tape.concat_rows(&rows)?
                }
            }
        };
        Ok(tape.value(c).clone())
    }
}

/// Image transformer applied frame by frame, as in the pooling baselines.
#[derive(Debug, Clone)]
pub struct PlainVit {
    pub cfg: EncoderConfig,
    pub embed: FrameEmbedding,
    pub blocks: Vec<Block>,
}

impl PlainVit {
    pub fn bind(tape: &mut Tape, store: &ParamStore, cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            cfg: *cfg,
            embed: FrameEmbedding::bind(tape, store)?,
            blocks: (0..cfg.cct_depth)
                .map(|l| Block::bind(tape, store, &format!("visual.blocks.{l}"), cfg.heads))
                .collect::<Result<_>>()?,
        })
    }
}

/// Mean of per-frame CLS outputs of the plain encoder, `1 × d`.
pub fn baseline_clip_mean(tape: &mut Tape, vit: &PlainVit, clip: &VideoClip) -> Result<Var> {
    let frames = embed_clip(tape, &vit.cfg, &vit.embed, clip)?;
    let mut cls = Vec::with_capacity(frames.len());
    for mut z in frames {
        for b in &vit.blocks {
            z = b.forward(tape, z)?;
        }
        cls.push(tape.slice_rows(z, 0, 1)?);
    }
    let h = if cls.len() == 1 {
        cls[0]
    } else {
        tape.concat_rows(&cls)?
    };
    tape.mean_rows(h)
}

/// Every layer attends over all `T(N+1)` tokens at once; the output is the
/// mean of the per-frame CLS states, `1 × d`.
pub fn baseline_clip_joint(tape: &mut Tape, vit: &PlainVit, clip: &VideoClip) -> Result<Var> {
    let frames = embed_clip(tape, &vit.cfg, &vit.embed, clip)?;
    let s = vit.cfg.num_patches() + 1;
    let mut x = if frames.len() == 1 {
        frames[0]
    } else {
        tape.concat_rows(&frames)?
    };
    for b in &vit.blocks {
        x = b.forward(tape, x)?;
    }
    let cls: Vec<Var> = (0..frames.len())
        .map(|t| tape.slice_rows(x, t * s, 1))
        .collect::<Result<_>>()?;
    let h = if cls.len() == 1 {
        cls[0]
    } else {
        tape.concat_rows(&cls)?
    };
    tape.mean_rows(h)
}

#[derive(Debug, Clone)]
enum VideoTower {
    Cross(VideoEncoder),
    Mean(PlainVit),
    Joint(PlainVit),
}

/// Video representation and, when prompting, the averaged patch tokens.
#[derive(Debug, Clone, Copy)]
pub struct ClipRepr {
    pub v: Var,
    pub zbar: Option<Var>,
}

/// A model's modules bound to one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    video: VideoTower,
    pub text: Option<TextEncoder>,
    pub prompt: Option<PromptGenerator>,
    pub head: Option<ClassifierHead>,
    pub logit_scale: Option<Var>,
}

impl Bound {
    pub fn bind(tape: &mut Tape, cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let video = match cfg.mode {
            ModelMode::Xclip => VideoTower::Cross(VideoEncoder::bind(tape, store, &cfg.encoder)?),
            ModelMode::ClipMean => VideoTower::Mean(PlainVit::bind(tape, store, &cfg.encoder)?),
            ModelMode::ClipJoint => VideoTower::Joint(PlainVit::bind(tape, store, &cfg.encoder)?),
        };
        let (text, logit_scale, head) = match cfg.head {
            HeadMode::Text => (
                Some(TextEncoder::bind(tape, store, &cfg.text)?),
                Some(tape.param(store, LOGIT_SCALE)?),
                None,
            ),
            HeadMode::Linear => (None, None, Some(ClassifierHead::bind(tape, store)?)),
        };
        let prompt = if cfg.prompting() {
            Some(PromptGenerator::bind(
                tape,
                store,
                &cfg.prompt,
                cfg.encoder.heads,
            )?)
        } else {
            None
        };
        Ok(Self {
            video,
            text,
            prompt,
            head,
            logit_scale,
        })
    }

    pub fn encode_clip(&self, tape: &mut Tape, clip: &VideoClip) -> Result<ClipRepr> {
        match &self.video {
            VideoTower::Cross(enc) => {
                let (v, frames) = enc.encode(tape, clip)?;
                let zbar = if self.prompt.is_some() {
                    let patches: Vec<Var> = (0..frames.tokens.len())
                        .map(|t| frames.patch_tokens(tape, t))
                        .collect::<Result<_>>()?;
                    Some(video_content_mean(tape, &patches)?)
                } else {
                    None
                };
                Ok(ClipRepr { v, zbar })
            }
            VideoTower::Mean(vit) => Ok(ClipRepr {
                v: baseline_clip_mean(tape, vit, clip)?,
                zbar: None,
            }),
            VideoTower::Joint(vit) => Ok(ClipRepr {
                v: baseline_clip_joint(tape, vit, clip)?,
                zbar: None,
            }),
        }
    }

    fn text(&self) -> Result<&TextEncoder> {
        self.text
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no text tower"))
    }

    /// `c` for each text, `K × d`.
    pub fn encode_texts(&self, tape: &mut Tape, texts: &[String]) -> Result<Var> {
        self.text()?.encode_all(tape, texts)
    }

    /// `ĉ` for one clip: prompted when enabled, otherwise `c` itself.
    pub fn enhance(&self, tape: &mut Tape, repr: &ClipRepr, c: Var) -> Result<Var> {
        match (&self.prompt, repr.zbar) {
            (Some(p), Some(zbar)) => p.enhance(tape, c, zbar),
            _ => Ok(c),
        }
    }

    /// Cosine similarity of the clip to every label, `1 × K`.
    pub fn similarities(&self, tape: &mut Tape, repr: &ClipRepr, c: Var) -> Result<Var> {
        let c_hat = self.enhance(tape, repr, c)?;
        similarity_row(tape, repr.v, c_hat)
    }

    /// Classification scores, `1 × K`: temperature-scaled similarities for a
    /// text head, logits for a linear head (`c` ignored).
    pub fn scores(&self, tape: &mut Tape, repr: &ClipRepr, c: Option<Var>) -> Result<Var> {
        if let Some(head) = &self.head {
            return head.logits(tape, repr.v);
        }
        let c = c.ok_or_else(|| Error::invalid("text head needs label embeddings"))?;
        let sims = self.similarities(tape, repr, c)?;
        let inv_tau = self.inv_tau(tape)?;
        tape.mul_scalar(sims, inv_tau)
    }

    fn inv_tau(&self, tape: &mut Tape) -> Result<Var> {
        let ls = self
            .logit_scale
            .ok_or_else(|| Error::invalid("model has no temperature"))?;
        tape.exp(ls)
    }

    /// Training loss of a batch whose `targets` index into `labels`. The text
    /// head builds a `B × B` similarity matrix against the batch's own labels
    /// (which must be distinct); the linear head uses cross-entropy.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        clips: &[VideoClip],
        targets: &[usize],
        labels: &[String],
    ) -> Result<Var> {
        if clips.is_empty() || clips.len() != targets.len() {
            return Err(Error::invalid("batch needs one target per clip"));
        }
        let reprs: Vec<ClipRepr> = clips
            .iter()
            .map(|c| self.encode_clip(tape, c))
            .collect::<Result<_>>()?;
        if let Some(head) = &self.head {
            let rows: Vec<Var> = reprs
                .iter()
                .map(|r| head.logits(tape, r.v))
                .collect::<Result<_>>()?;
            let logits = if rows.len() == 1 {
                rows[0]
            } else {
                tape.concat_rows(&rows)?
            };
            return tape.cross_entropy(logits, targets);
        }
        let mut seen = targets.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != targets.len() {
            return Err(Error::invalid("contrastive batch repeats a label"));
        }
        let texts: Vec<String> = targets.iter().map(|&t| labels[t].clone()).collect();
        let c = self.encode_texts(tape, &texts)?;
        let rows: Vec<Var> = reprs
            .iter()
            .map(|r| self.similarities(tape, r, c))
            .collect::<Result<_>>()?;
        let sims = if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat_rows(&rows)?
        };
        let inv_tau = self.inv_tau(tape)?;
        contrastive_loss(tape, sims, inv_tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origins_match_init_tags() {
        let cfg = crate::config::Config::tiny().model_config();
        let m = Model::init(&cfg, &["a".into(), "b".into()], 0).unwrap();
        for (name, p) in m.params.iter() {
            assert_eq!(origin_for(name), p.origin, "{name}");
        }
        assert!(m.params.contains("visual.blocks.0.cfa.o.w"));
        assert_eq!(origin_for("visual.blocks.0.attn.q.w"), Origin::Inherited);
        assert_eq!(origin_for("visual.blocks.1.msg.w"), Origin::Fresh);
    }
}
