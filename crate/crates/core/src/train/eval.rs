use crate::contrastive::{argmax, multi_view_aggregate};
use crate::data::{extract_views, ClipSpec, SamplingMode};
use crate::error::{Error, Result};
use crate::tensor::Tape;
use crate::train::{Dataset, HeadMode, Model};
use crate::video::VideoClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Classify against the model's training labels; unknown labels are errors.
    Supervised,
    /// Classify against the dataset's own labels through the text tower.
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub views: usize,
    pub crops: usize,
    pub sampling: SamplingMode,
    /// Template ensemble for label prompts; `None` uses the bare label.
    pub templates: Option<Vec<String>>,
    pub mode: EvalMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            views: 1,
            crops: 1,
            sampling: SamplingMode::Sparse,
            templates: None,
            mode: EvalMode::Supervised,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub label: String,
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    /// One entry per dataset label, in label order.
    pub per_class: Vec<ClassAccuracy>,
    /// Predicted label per sample, in dataset order.
    pub predictions: Vec<String>,
}

/// Scores (`views × crops` rows) of one clip against the candidate labels.
fn view_scores(
    model: &Model,
    views: &[VideoClip],
    c: Option<&crate::tensor::Tensor>,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let c = c.map(|t| tape.constant(t.clone())).transpose()?;
    views
        .iter()
        .map(|v| {
            let repr = bound.encode_clip(&mut tape, v)?;
            let s = bound.scores(&mut tape, &repr, c)?;
            Ok(tape.value(s).data().to_vec())
        })
        .collect()
}

/// Multi-view top-1: per clip, softmax scores are averaged over temporal
/// views and spatial crops before the argmax.
pub fn evaluate(model: &Model, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let candidates: Vec<String> = match opts.mode {
        EvalMode::Supervised => {
            if let Some(l) = data.labels.iter().find(|l| !model.labels.contains(l)) {
                return Err(Error::Data(format!(
                    "label `{l}` is not in the model's training vocabulary"
                )));
            }
            model.labels.clone()
        }
        EvalMode::ZeroShot => {
            if model.cfg.head != HeadMode::Text {
                return Err(Error::invalid("zero-shot evaluation needs a text head"));
            }
            data.labels.clone()
        }
    };
    let c = match model.cfg.head {
        HeadMode::Text => Some(model.text_embeddings(&candidates, opts.templates.as_deref())?),
        HeadMode::Linear => None,
    };
    let enc = &model.cfg.encoder;
    let mut per_class: Vec<ClassAccuracy> = data
        .labels
        .iter()
        .map(|l| ClassAccuracy {
            label: l.clone(),
            correct: 0,
            total: 0,
        })
        .collect();
    let mut predictions = Vec::with_capacity(data.len());
    for s in &data.samples {
        let spec = ClipSpec {
            source_frames: s.clip.len(),
            frames: enc.frames,
            mode: opts.sampling,
            deterministic: true,
            seed: 0,
        };
        let views = extract_views(
            &s.clip, &spec, opts.views, enc.height, enc.width, opts.crops,
        )?;
        let scores = view_scores(model, &views, c.as_ref())?;
        let probs = multi_view_aggregate(&scores)?;
        let pred = &candidates[argmax(&probs).expect("non-empty candidates")];
        let entry = &mut per_class[s.label];
        entry.total += 1;
        if *pred == entry.label {
            entry.correct += 1;
        }
        predictions.push(pred.clone());
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    Ok(EvalReport {
        top1: correct as f64 / data.len() as f64,
        per_class,
        predictions,
    })
}
