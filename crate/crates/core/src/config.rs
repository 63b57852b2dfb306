//! Flat `key=value` run configuration. Unknown keys and out-of-range values
//! are rejected; emitting and re-parsing a config is the identity.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::prompt::PromptConfig;
use crate::text::TextConfig;
use crate::train::{HeadMode, ModelConfig, ModelMode, TrainConfig};
use crate::video::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Sparse,
    Dense,
}

impl Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sampling::Sparse => "sparse",
            Sampling::Dense => "dense",
        })
    }
}

impl FromStr for Sampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Sampling::Sparse),
            "dense" => Ok(Sampling::Dense),
            _ => Err(Error::Config(format!(
                "unknown sampling `{s}` (sparse|dense)"
            ))),
        }
    }
}

/// Text prompts used at evaluation: the bare label or the built-in ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Templates {
    Label,
    Builtin,
}

impl Display for Templates {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Templates::Label => "label",
            Templates::Builtin => "builtin",
        })
    }
}

impl FromStr for Templates {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(Templates::Label),
            "builtin" => Ok(Templates::Builtin),
            _ => Err(Error::Config(format!(
                "unknown templates `{s}` (label|builtin)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub root: String,
    pub manifest: String,
    pub eval_manifest: String,
    pub sampling: Sampling,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub views: usize,
    pub spatial_crops: usize,
    pub templates: Templates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroShotConfig {
    /// Expected number of distinct eval labels; 0 accepts any.
    pub pool: usize,
    /// Labels sampled per repetition; 0 uses the whole pool.
    pub subset: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    /// Explicit class ids; overrides `classes` when non-empty.
    pub class_ids: Vec<usize>,
    pub clips: usize,
    pub frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsConfig {
    pub frames: Vec<usize>,
    pub patches: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub instrument: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub max_params: usize,
    pub tol: f64,
    pub step: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub encoder: EncoderConfig,
    pub text_depth: usize,
    pub text_len: usize,
    pub prompt: PromptConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub shots: usize,
    pub zeroshot: ZeroShotConfig,
    pub synth: SynthConfig,
    pub flops: FlopsConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                frames: 4,
                height: 16,
                width: 16,
                patch: 4,
                dim: 32,
                cct_depth: 2,
                mit_depth: 1,
                heads: 2,
            },
            text_depth: 2,
            text_len: 32,
            prompt: PromptConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig {
                root: String::new(),
                manifest: String::new(),
                eval_manifest: String::new(),
                sampling: Sampling::Sparse,
                stride: 2,
            },
            eval: EvalConfig {
                views: 1,
                spatial_crops: 1,
                templates: Templates::Label,
            },
            shots: 2,
            zeroshot: ZeroShotConfig {
                pool: 0,
                subset: 0,
                repeats: 1,
            },
            synth: SynthConfig {
                classes: 8,
                class_ids: Vec::new(),
                clips: 16,
                frames: 4,
                seed: 0,
            },
            flops: FlopsConfig {
                frames: vec![1, 2, 4, 8, 16, 32],
                patches: 49,
                dim: 768,
                heads: 12,
                layers: 12,
                instrument: true,
            },
            gradcheck: GradcheckConfig {
                max_params: 20_000,
                tol: 1e-4,
                step: 1e-5,
                batch: 2,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got `{value}`"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn check(ok: bool, key: &str, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} {what}")))
    }
}

impl Config {
    /// Every key with its canonical value, in sorted key order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.encoder;
        let t = &self.train;
        let mut out = vec![
            ("model.T", e.frames.to_string()),
            ("model.H", e.height.to_string()),
            ("model.W", e.width.to_string()),
            ("model.P", e.patch.to_string()),
            ("model.d", e.dim.to_string()),
            ("model.L_c", e.cct_depth.to_string()),
            ("model.L_m", e.mit_depth.to_string()),
            ("model.heads", e.heads.to_string()),
            ("model.text_depth", self.text_depth.to_string()),
            ("model.text_len", self.text_len.to_string()),
            ("prompt.blocks", self.prompt.blocks.to_string()),
            ("prompt.alpha_init", self.prompt.alpha_init.to_string()),
            ("prompt.enabled", self.prompt.enabled.to_string()),
            (
                "prompt.per_dim_alpha",
                self.prompt.per_dim_alpha.to_string(),
            ),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.freeze_image", t.freeze_image.to_string()),
            ("train.freeze_text", t.freeze_text.to_string()),
            ("train.mode", t.mode.to_string()),
            ("train.head", t.head.to_string()),
            ("train.fresh_lr_mult", t.fresh_lr_mult.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.warmup", t.warmup.to_string()),
            ("data.root", self.data.root.clone()),
            ("data.manifest", self.data.manifest.clone()),
            ("data.eval_manifest", self.data.eval_manifest.clone()),
            ("data.sampling", self.data.sampling.to_string()),
            ("data.stride", self.data.stride.to_string()),
            ("eval.views", self.eval.views.to_string()),
            ("eval.spatial_crops", self.eval.spatial_crops.to_string()),
            ("eval.templates", self.eval.templates.to_string()),
            ("fewshot.shots", self.shots.to_string()),
            ("zeroshot.pool", self.zeroshot.pool.to_string()),
            ("zeroshot.subset", self.zeroshot.subset.to_string()),
            ("zeroshot.repeats", self.zeroshot.repeats.to_string()),
            ("synth.classes", self.synth.classes.to_string()),
            ("synth.class_ids", join(&self.synth.class_ids)),
            ("synth.clips", self.synth.clips.to_string()),
            ("synth.frames", self.synth.frames.to_string()),
            ("synth.seed", self.synth.seed.to_string()),
            ("flops.frames", join(&self.flops.frames)),
            ("flops.patches", self.flops.patches.to_string()),
            ("flops.dim", self.flops.dim.to_string()),
            ("flops.heads", self.flops.heads.to_string()),
            ("flops.layers", self.flops.layers.to_string()),
            ("flops.instrument", self.flops.instrument.to_string()),
            (
                "gradcheck.max_params",
                self.gradcheck.max_params.to_string(),
            ),
            ("gradcheck.tol", self.gradcheck.tol.to_string()),
            ("gradcheck.step", self.gradcheck.step.to_string()),
            ("gradcheck.batch", self.gradcheck.batch.to_string()),
        ];
        out.sort_by_key(|(k, _)| *k);
        out
    }

    /// Assigns one key without range checks (see [`Config::validate`]).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let e = &mut self.encoder;
        let t = &mut self.train;
        match key {
            "model.T" => e.frames = parse(key, v)?,
            "model.H" => e.height = parse(key, v)?,
            "model.W" => e.width = parse(key, v)?,
            "model.P" => e.patch = parse(key, v)?,
            "model.d" => e.dim = parse(key, v)?,
            "model.L_c" => e.cct_depth = parse(key, v)?,
            "model.L_m" => e.mit_depth = parse(key, v)?,
            "model.heads" => e.heads = parse(key, v)?,
            "model.text_depth" => self.text_depth = parse(key, v)?,
            "model.text_len" => self.text_len = parse(key, v)?,
            "prompt.blocks" => self.prompt.blocks = parse(key, v)?,
            "prompt.alpha_init" => self.prompt.alpha_init = parse(key, v)?,
            "prompt.enabled" => self.prompt.enabled = parse_bool(key, v)?,
            "prompt.per_dim_alpha" => self.prompt.per_dim_alpha = parse_bool(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch" => t.batch = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.freeze_image" => t.freeze_image = parse_bool(key, v)?,
            "train.freeze_text" => t.freeze_text = parse_bool(key, v)?,
            "train.mode" => t.mode = v.parse()?,
            "train.head" => t.head = v.parse()?,
            "train.fresh_lr_mult" => t.fresh_lr_mult = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.warmup" => t.warmup = parse(key, v)?,
            "data.root" => self.data.root = v.to_string(),
            "data.manifest" => self.data.manifest = v.to_string(),
            "data.eval_manifest" => self.data.eval_manifest = v.to_string(),
            "data.sampling" => self.data.sampling = v.parse()?,
            "data.stride" => self.data.stride = parse(key, v)?,
            "eval.views" => self.eval.views = parse(key, v)?,
            "eval.spatial_crops" => self.eval.spatial_crops = parse(key, v)?,
            "eval.templates" => self.eval.templates = v.parse()?,
            "fewshot.shots" => self.shots = parse(key, v)?,
            "zeroshot.pool" => self.zeroshot.pool = parse(key, v)?,
            "zeroshot.subset" => self.zeroshot.subset = parse(key, v)?,
            "zeroshot.repeats" => self.zeroshot.repeats = parse(key, v)?,
            "synth.classes" => self.synth.classes = parse(key, v)?,
            "synth.class_ids" => self.synth.class_ids = parse_list(key, v)?,
            "synth.clips" => self.synth.clips = parse(key, v)?,
            "synth.frames" => self.synth.frames = parse(key, v)?,
            "synth.seed" => self.synth.seed = parse(key, v)?,
            "flops.frames" => self.flops.frames = parse_list(key, v)?,
            "flops.patches" => self.flops.patches = parse(key, v)?,
            "flops.dim" => self.flops.dim = parse(key, v)?,
            "flops.heads" => self.flops.heads = parse(key, v)?,
            "flops.layers" => self.flops.layers = parse(key, v)?,
            "flops.instrument" => self.flops.instrument = parse_bool(key, v)?,
            "gradcheck.max_params" => self.gradcheck.max_params = parse(key, v)?,
            "gradcheck.tol" => self.gradcheck.tol = parse(key, v)?,
            "gradcheck.step" => self.gradcheck.step = parse(key, v)?,
            "gradcheck.batch" => self.gradcheck.batch = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Range checks on every numeric key and the model shape constraints.
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        check(
            (1..=256).contains(&e.frames),
            "model.T",
            "must be in 1..=256",
        )?;
        check(e.patch >= 1, "model.P", "must be at least 1")?;
        check(
            (1..=4096).contains(&e.height) && e.height.is_multiple_of(e.patch.max(1)),
            "model.H",
            "must be in 1..=4096 and divisible by model.P",
        )?;
        check(
            (1..=4096).contains(&e.width) && e.width.is_multiple_of(e.patch.max(1)),
            "model.W",
            "must be in 1..=4096 and divisible by model.P",
        )?;
        check(
            (1..=64).contains(&e.heads),
            "model.heads",
            "must be in 1..=64",
        )?;
        check(
            (1..=4096).contains(&e.dim) && e.dim.is_multiple_of(e.heads.max(1)),
            "model.d",
            "must be in 1..=4096 and divisible by model.heads",
        )?;
        check(
            (1..=64).contains(&e.cct_depth),
            "model.L_c",
            "must be in 1..=64",
        )?;
        check(e.mit_depth <= 64, "model.L_m", "must be in 0..=64")?;
        check(
            self.text_depth <= 64,
            "model.text_depth",
            "must be in 0..=64",
        )?;
        check(
            (3..=1024).contains(&self.text_len),
            "model.text_len",
            "must be in 3..=1024",
        )?;
        check(
            !self.prompt.enabled || (1..=16).contains(&self.prompt.blocks),
            "prompt.blocks",
            "must be in 1..=16",
        )?;
        check(
            self.prompt.alpha_init.is_finite(),
            "prompt.alpha_init",
            "must be finite",
        )?;
        self.train.validate()?;
        check(
            (1..=1024).contains(&self.data.stride),
            "data.stride",
            "must be in 1..=1024",
        )?;
        check(
            (1..=64).contains(&self.eval.views),
            "eval.views",
            "must be in 1..=64",
        )?;
        check(
            matches!(self.eval.spatial_crops, 1 | 3),
            "eval.spatial_crops",
            "must be 1 or 3",
        )?;
        check(self.shots >= 1, "fewshot.shots", "must be at least 1")?;
        check(
            self.zeroshot.repeats >= 1,
            "zeroshot.repeats",
            "must be at least 1",
        )?;
        check(
            self.zeroshot.pool == 0 || self.zeroshot.subset <= self.zeroshot.pool,
            "zeroshot.subset",
            "must not exceed zeroshot.pool",
        )?;
        check(
            (1..=16).contains(&self.synth.classes),
            "synth.classes",
            "must be in 1..=16",
        )?;
        check(
            self.synth.class_ids.iter().all(|&c| c < 16),
            "synth.class_ids",
            "entries must be in 0..16",
        )?;
        check(self.synth.clips >= 1, "synth.clips", "must be at least 1")?;
        check(self.synth.frames >= 1, "synth.frames", "must be at least 1")?;
        check(
            !self.flops.frames.is_empty() && self.flops.frames.iter().all(|&t| t >= 1),
            "flops.frames",
            "must list positive frame counts",
        )?;
        check(
            self.flops.patches >= 1,
            "flops.patches",
            "must be at least 1",
        )?;
        check(
            self.flops.heads >= 1 && self.flops.dim.is_multiple_of(self.flops.heads),
            "flops.dim",
            "must be divisible by flops.heads",
        )?;
        check(self.flops.layers >= 1, "flops.layers", "must be at least 1")?;
        check(
            self.gradcheck.max_params >= 1,
            "gradcheck.max_params",
            "must be at least 1",
        )?;
        check(
            self.gradcheck.tol > 0.0 && self.gradcheck.tol.is_finite(),
            "gradcheck.tol",
            "must be positive",
        )?;
        check(
            self.gradcheck.step > 0.0 && self.gradcheck.step < 1.0,
            "gradcheck.step",
            "must be in (0, 1)",
        )?;
        check(
            self.gradcheck.batch >= 1,
            "gradcheck.batch",
            "must be at least 1",
        )?;
        Ok(())
    }

    /// Defaults overlaid with `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Overlays a config file's contents; blank lines and `#` comments are
    /// ignored and a key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1))
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{k}`",
                    n + 1
                )));
            }
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn text_config(&self) -> TextConfig {
        TextConfig {
            dim: self.encoder.dim,
            depth: self.text_depth,
            heads: self.encoder.heads,
            max_len: self.text_len,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder,
            text: self.text_config(),
            prompt: self.prompt,
            mode: self.train.mode,
            head: self.train.head,
        }
    }

    /// The tiny shape used for finite-difference checks.
    pub fn tiny() -> Self {
        let mut c = Config::default();
        c.encoder = EncoderConfig {
            frames: 2,
            height: 8,
            width: 8,
            patch: 4,
            dim: 8,
            cct_depth: 2,
            mit_depth: 1,
            heads: 2,
        };
        c.train.mode = ModelMode::Xclip;
        c.train.head = HeadMode::Text;
        c
    }
}
