use std::collections::{BTreeMap, BTreeSet};

use crate::config::{Config, Sampling};
use crate::contrastive::{LOGIT_SCALE, MAX_LOGIT_SCALE};
use crate::data::{fit_clip, render_clip, ClipSpec, SamplingMode, SynthClass, SynthSpec};
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::{finite_diff_check, GradCheckReport, Rng, Tape, Tensor};
use crate::train::checkpoint::Checkpoint;
use crate::train::eval::{evaluate, EvalOptions};
use crate::train::model::{origin_for, Bound};
use crate::train::optim::{learning_rate, AdamW};
use crate::train::{plan_batches, Dataset, Model};
use crate::video::VideoClip;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Training-set top-1 after the epoch (one center view).
    pub top1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

const LABEL_SEP: char = '|';

pub fn sampling_mode(cfg: &Config) -> SamplingMode {
    match cfg.data.sampling {
        Sampling::Sparse => SamplingMode::Sparse,
        Sampling::Dense => SamplingMode::Dense {
            stride: cfg.data.stride,
        },
    }
}

/// Optimizer state plus the position in a deterministic schedule. The batch
/// order of epoch `e` and the frames drawn at step `s` depend only on the
/// seed, `e` and `s`, so training resumes exactly from any checkpoint.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub optim: AdamW,
    pub step: u64,
    epoch_loss_sum: f64,
    epoch_steps: u64,
}

impl Trainer {
    pub fn new(config: &Config, labels: &[String]) -> Result<Self> {
        config.validate()?;
        if let Some(l) = labels
            .iter()
            .find(|l| l.contains(LABEL_SEP) || l.contains('\n'))
        {
            return Err(Error::Data(format!(
                "label `{l}` contains a reserved character"
            )));
        }
        let model = Model::init(&config.model_config(), labels, config.train.seed)?;
        Ok(Self {
            config: config.clone(),
            model,
            optim: AdamW::new(config.train.weight_decay, config.train.fresh_lr_mult),
            step: 0,
            epoch_loss_sum: 0.0,
            epoch_steps: 0,
        })
    }

    fn plan(&self, data: &Dataset) -> Vec<Vec<Vec<usize>>> {
        let labels: Vec<usize> = data.samples.iter().map(|s| s.label).collect();
        (0..self.config.train.epochs)
            .map(|e| {
                plan_batches(
                    &labels,
                    self.config.train.batch,
                    &mut Rng::derive(self.config.train.seed, 1000 + e as u64),
                )
            })
            .collect()
    }

    pub fn total_steps(&self, data: &Dataset) -> u64 {
        self.plan(data).iter().map(|e| e.len() as u64).sum()
    }

    fn frozen(&self) -> BTreeSet<String> {
        self.model
            .frozen(
                self.config.train.freeze_image,
                self.config.train.freeze_text,
            )
            .into_iter()
            .collect()
    }

    /// The training view of sample `i` at step `step`: stochastic frame
    /// indices fitted to the model's frame size.
    fn training_clip(&self, data: &Dataset, i: usize, step: u64) -> Result<VideoClip> {
        let clip = &data.samples[i].clip;
        let enc = &self.config.encoder;
        let seed = Rng::derive(self.config.train.seed, (step << 24) ^ i as u64).next_u64();
        let spec = ClipSpec {
            source_frames: clip.len(),
            frames: enc.frames,
            mode: sampling_mode(&self.config),
            deterministic: false,
            seed,
        };
        fit_clip(clip, &spec.sample()?, enc.height, enc.width)
    }

    /// Forward, backward and one optimizer update on `batch`.
    fn train_step(
        &mut self,
        data: &Dataset,
        batch: &[usize],
        lr: f64,
        frozen: &BTreeSet<String>,
    ) -> Result<f64> {
        let clips: Vec<VideoClip> = batch
            .iter()
            .map(|&i| self.training_clip(data, i, self.step))
            .collect::<Result<_>>()?;
        let targets: Vec<usize> = batch.iter().map(|&i| data.samples[i].label).collect();
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape)?;
        let loss = bound.batch_loss(&mut tape, &clips, &targets, &data.labels)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at step {}",
                self.step
            )));
        }
        let grads = tape.backward(loss)?;
        let grads = tape.param_grads(&grads);
        self.optim
            .step(&mut self.model.params, &grads, lr, frozen)?;
        if let Ok(ls) = self.model.params.get_mut(LOGIT_SCALE) {
            for v in ls.data_mut() {
                *v = v.min(MAX_LOGIT_SCALE);
            }
        }
        Ok(value)
    }

    /// Trains until the schedule ends or `max_steps` more steps have run.
    /// Epoch metrics are produced for every epoch completed in this call.
    pub fn run(
        &mut self,
        data: &Dataset,
        max_steps: Option<u64>,
    ) -> Result<(Vec<EpochMetrics>, Vec<StepRecord>)> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if data.labels != self.model.labels {
            return Err(Error::Data(
                "training labels differ from the model's label vocabulary".into(),
            ));
        }
        let plan = self.plan(data);
        let total: u64 = plan.iter().map(|e| e.len() as u64).sum();
        let frozen = self.frozen();
        let stop = max_steps.map_or(total, |m| (self.step + m).min(total));
        let mut epochs = Vec::new();
        let mut steps = Vec::new();
        let mut start = 0u64;
        for (e, batches) in plan.iter().enumerate() {
            let end = start + batches.len() as u64;
            while self.step >= start && self.step < end && self.step < stop {
                let lr = learning_rate(
                    self.config.train.lr,
                    self.step,
                    total,
                    self.config.train.warmup,
                );
                let loss =
                    self.train_step(data, &batches[(self.step - start) as usize], lr, &frozen)?;
                steps.push(StepRecord {
                    step: self.step,
                    lr,
                    loss,
                });
                self.epoch_loss_sum += loss;
                self.epoch_steps += 1;
                self.step += 1;
                if self.step == end {
                    let top1 = self.train_accuracy(data)?;
                    epochs.push(EpochMetrics {
                        epoch: e + 1,
                        loss: self.epoch_loss_sum / self.epoch_steps as f64,
                        top1,
                    });
                    self.epoch_loss_sum = 0.0;
                    self.epoch_steps = 0;
                }
            }
            start = end;
        }
        Ok((epochs, steps))
    }

    pub fn train_accuracy(&self, data: &Dataset) -> Result<f64> {
        let opts = EvalOptions {
            sampling: sampling_mode(&self.config),
            ..EvalOptions::default()
        };
        Ok(evaluate(&self.model, data, &opts)?.top1)
    }

    /// Parameters, Adam moments (`optim.m.*`, `optim.v.*`) and a config
    /// snapshot carrying the step, partial-epoch loss and label vocabulary.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, p) in self.model.params.iter() {
            tensors.insert(name.to_string(), p.value.clone());
            let shape = p.value.shape();
            if let Some(m) = self.optim.m.get(name) {
                tensors.insert(
                    format!("optim.m.{name}"),
                    Tensor::new(shape, m.clone()).expect("moment matches param"),
                );
            }
            if let Some(v) = self.optim.v.get(name) {
                tensors.insert(
                    format!("optim.v.{name}"),
                    Tensor::new(shape, v.clone()).expect("moment matches param"),
                );
            }
        }
        let mut config = self.config.to_text();
        config.push_str(&format!("state.step={}\n", self.step));
        config.push_str(&format!("state.epoch_loss_sum={}\n", self.epoch_loss_sum));
        config.push_str(&format!("state.epoch_steps={}\n", self.epoch_steps));
        let labels: Vec<&str> = self.model.labels.iter().map(String::as_str).collect();
        config.push_str(&format!(
            "state.labels={}\n",
            labels.join(&LABEL_SEP.to_string())
        ));
        Checkpoint {
            tensors: tensors.into_iter().collect(),
            config,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut cfg_text = String::new();
        let (mut step, mut loss_sum, mut loss_steps, mut labels) = (None, 0.0, 0, None);
        for line in ck.config.lines() {
            let parse_err = || Error::Format(format!("bad checkpoint state line `{line}`"));
            if let Some(v) = line.strip_prefix("state.step=") {
                step = Some(v.parse::<u64>().map_err(|_| parse_err())?);
            } else if let Some(v) = line.strip_prefix("state.epoch_loss_sum=") {
                loss_sum = v.parse::<f64>().map_err(|_| parse_err())?;
            } else if let Some(v) = line.strip_prefix("state.epoch_steps=") {
                loss_steps = v.parse::<u64>().map_err(|_| parse_err())?;
            } else if let Some(v) = line.strip_prefix("state.labels=") {
                labels = Some(v.split(LABEL_SEP).map(str::to_string).collect::<Vec<_>>());
            } else {
                cfg_text.push_str(line);
                cfg_text.push('\n');
            }
        }
        let config = Config::parse(&cfg_text)?;
        let step = step.ok_or_else(|| Error::Format("checkpoint lacks state.step".into()))?;
        let labels = labels.ok_or_else(|| Error::Format("checkpoint lacks state.labels".into()))?;
        let mut trainer = Trainer::new(&config, &labels)?;

        let mut params = ParamStore::new();
        for (name, t) in &ck.tensors {
            if let Some(p) = name.strip_prefix("optim.m.") {
                trainer.optim.m.insert(p.to_string(), t.data().to_vec());
            } else if let Some(p) = name.strip_prefix("optim.v.") {
                trainer.optim.v.insert(p.to_string(), t.data().to_vec());
            } else {
                params.insert(name.clone(), t.clone(), origin_for(name));
            }
        }
        let expected: Vec<(&str, &[usize])> = trainer
            .model
            .params
            .iter()
            .map(|(n, p)| (n, p.value.shape()))
            .collect();
        let found: Vec<(&str, &[usize])> =
            params.iter().map(|(n, p)| (n, p.value.shape())).collect();
        if expected != found {
            return Err(Error::Format(
                "checkpoint parameters do not match its config".into(),
            ));
        }
        trainer.model.params = params;
        trainer.optim.t = step;
        trainer.step = step;
        trainer.epoch_loss_sum = loss_sum;
        trainer.epoch_steps = loss_steps;
        Ok(trainer)
    }
}

/// Finite-difference check of the full training loss on a small batch of
/// synthetic clips. CFA output projections are drawn small but non-zero so
/// every parameter receives gradient. `corrupt` perturbs the analytic
/// gradients (negative control).
pub fn gradcheck_model(config: &Config, corrupt: bool) -> Result<GradCheckReport> {
    config.validate()?;
    let gc = config.gradcheck;
    let enc = config.encoder;
    let classes: Vec<SynthClass> = (0..gc.batch)
        .map(|i| SynthClass::from_id(i % 16))
        .collect::<Result<_>>()?;
    if gc.batch > 16 {
        return Err(Error::Config("gradcheck.batch must be at most 16".into()));
    }
    let spec = SynthSpec {
        frames: enc.frames,
        height: enc.height,
        width: enc.width,
    };
    let clips: Vec<VideoClip> = classes
        .iter()
        .map(|&c| render_clip(&spec, c, 0, config.train.seed))
        .collect::<Result<_>>()?;
    let mut labels: Vec<String> = classes.iter().map(SynthClass::label).collect();
    labels.sort();
    let targets: Vec<usize> = classes
        .iter()
        .map(|c| labels.binary_search(&c.label()).expect("present"))
        .collect();

    let mcfg = config.model_config();
    let mut model = Model::init(&mcfg, &labels, config.train.seed)?;
    let mut rng = Rng::derive(config.train.seed, 77);
    let names: Vec<String> = model
        .params
        .names()
        .filter(|n| n.contains(".cfa.o."))
        .map(str::to_string)
        .collect();
    for n in names {
        for v in model.params.get_mut(&n)?.data_mut() {
            *v = rng.trunc_normal(0.02);
        }
    }
    let numel = model.params.numel();
    if numel > gc.max_params {
        return Err(Error::Config(format!(
            "model has {numel} parameters, above the gradcheck cap of {}",
            gc.max_params
        )));
    }

    let loss_of = |store: &ParamStore| -> Result<(Tape, crate::tensor::Var)> {
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &mcfg, store)?;
        let loss = bound.batch_loss(&mut tape, &clips, &targets, &labels)?;
        Ok((tape, loss))
    };
    let (tape, loss) = loss_of(&model.params)?;
    let grads = tape.backward(loss)?;
    let mut analytic = tape.param_grads(&grads);
    if corrupt {
        for g in analytic.values_mut() {
            g[0] += 1e-2 + 0.5 * g[0].abs();
        }
    }
    finite_diff_check(
        |store| {
            let (tape, loss) = loss_of(store)?;
            Ok(tape.value(loss).item())
        },
        &model.params,
        &analytic,
        gc.step,
        gc.tol,
    )
}
