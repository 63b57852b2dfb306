//! `crossframe` command line: subcommands over a flat `key=value` config.
//!
//! Every subcommand validates its config and inputs before touching the
//! output directory, so a failed run leaves nothing behind. Exit codes are
//! 0 on success, 1 on validation errors and 2 on numerical failure.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, Templates};
use crate::cost::{CostReport, CostShape, Instrument};
use crate::data::{few_shot_split, generate_classes, Manifest, SynthClass, SynthSpec};
use crate::error::{Error, Result};
use crate::tensor::{GradCheckReport, Rng};
use crate::text::builtin_templates;
use crate::train::{
    evaluate, sampling_mode, Checkpoint, Dataset, EpochMetrics, EvalMode, EvalOptions, EvalReport,
    Model, StepRecord, Trainer,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "crossframe",
    version,
    about = "Train and evaluate cross-frame video-text models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file with one `key=value` per line.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` overrides, applied after the file.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic moving-square dataset as PPM frames plus manifest.csv.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on `data.manifest`; evaluates on `data.eval_manifest` when set.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Multi-view evaluation of a checkpoint on `data.eval_manifest`.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on `data.manifest`, then classify `data.eval_manifest` clips
    /// against their own (disjoint) labels.
    Zeroshot {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Skip training and use this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a `fewshot.shots`-per-class split of `data.manifest`, test on `data.eval_manifest`.
    Fewshot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention cost table for every layout.
    Flops {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full loss on the tiny model.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Perturb analytic gradients; the check must then fail.
        #[arg(long)]
        corrupt: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_INVALID,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(args: &ConfigArgs, base: Config) -> Result<Config> {
    let mut cfg = base;
    if let Some(p) = &args.config {
        let text =
            fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    }
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(cfg: &Config, path: &str, key: &str) -> Result<PathBuf> {
    if path.is_empty() {
        return Err(Error::Config(format!("{key} is not set")));
    }
    Ok(if cfg.data.root.is_empty() {
        PathBuf::from(path)
    } else {
        Path::new(&cfg.data.root).join(path)
    })
}

fn read_manifest(cfg: &Config, path: &str, key: &str) -> Result<Manifest> {
    Manifest::read(&resolve(cfg, path, key)?)
}

fn eval_options(cfg: &Config, mode: EvalMode) -> EvalOptions {
    EvalOptions {
        views: cfg.eval.views,
        crops: cfg.eval.spatial_crops,
        sampling: sampling_mode(cfg),
        templates: match cfg.eval.templates {
            Templates::Label => None,
            Templates::Builtin => Some(builtin_templates()),
        },
        mode,
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_metrics(path: &Path, epochs: &[EpochMetrics]) -> Result<()> {
    let mut s = String::from("epoch,loss,top1\n");
    for e in epochs {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.top1));
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_steps(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut s = String::from("step,lr,loss\n");
    for r in steps {
        s.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_eval(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["label", "correct", "total", "top1"])
        .map_err(err)?;
    for c in &report.per_class {
        w.write_record([
            c.label.clone(),
            c.correct.to_string(),
            c.total.to_string(),
            c.accuracy().to_string(),
        ])
        .map_err(err)?;
    }
    let correct: usize = report.per_class.iter().map(|c| c.correct).sum();
    let total: usize = report.per_class.iter().map(|c| c.total).sum();
    w.write_record([
        "(all)".to_string(),
        correct.to_string(),
        total.to_string(),
        report.top1.to_string(),
    ])
    .map_err(err)?;
    w.flush()?;
    Ok(())
}

/// Trains to completion and writes metrics, steps, checkpoint and config.
fn train_and_save(trainer: &mut Trainer, data: &Dataset, out: &Path) -> Result<Vec<EpochMetrics>> {
    let (epochs, steps) = trainer.run(data, None)?;
    create_out(out)?;
    write_metrics(&out.join("metrics.csv"), &epochs)?;
    write_steps(&out.join("steps.csv"), &steps)?;
    trainer.checkpoint().save(&out.join("checkpoint.xclp"))?;
    fs::write(out.join("config.txt"), trainer.config.to_text())?;
    for e in &epochs {
        println!(
            "epoch {:>3}  loss {:.4}  top1 {:.3}",
            e.epoch, e.loss, e.top1
        );
    }
    Ok(epochs)
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Synth { cfg, out } => cmd_synth(&load_config(&cfg, Config::default())?, &out),
        Command::Train { cfg, out, resume } => cmd_train(
            &load_config(&cfg, Config::default())?,
            &out,
            resume.as_deref(),
        ),
        Command::Eval {
            cfg,
            checkpoint,
            out,
        } => cmd_eval(&load_config(&cfg, Config::default())?, &checkpoint, &out),
        Command::Zeroshot {
            cfg,
            checkpoint,
            out,
        } => cmd_zeroshot(
            &load_config(&cfg, Config::default())?,
            checkpoint.as_deref(),
            &out,
        ),
        Command::Fewshot { cfg, out } => cmd_fewshot(&load_config(&cfg, Config::default())?, &out),
        Command::Flops { cfg, out } => cmd_flops(&load_config(&cfg, Config::default())?, &out),
        Command::Gradcheck { cfg, corrupt, out } => {
            cmd_gradcheck(&load_config(&cfg, Config::tiny())?, corrupt, out.as_deref())
        }
    }
}

/// Class list for `synth`: explicit ids, else the first `synth.classes`.
pub fn synth_classes(cfg: &Config) -> Result<Vec<SynthClass>> {
    let ids: Vec<usize> = if cfg.synth.class_ids.is_empty() {
        (0..cfg.synth.classes).collect()
    } else {
        cfg.synth.class_ids.clone()
    };
    let unique: BTreeSet<usize> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(Error::Config("synth.class_ids has duplicates".into()));
    }
    ids.into_iter().map(SynthClass::from_id).collect()
}

pub fn cmd_synth(cfg: &Config, out: &Path) -> Result<i32> {
    let spec = SynthSpec {
        frames: cfg.synth.frames,
        height: cfg.encoder.height,
        width: cfg.encoder.width,
    };
    let ds = generate_classes(&synth_classes(cfg)?, cfg.synth.clips, &spec, cfg.synth.seed)?;
    create_out(out)?;
    let m = ds.write_to(out)?;
    println!(
        "wrote {} clips in {} classes to {}",
        m.len(),
        ds.classes.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_train(cfg: &Config, out: &Path, resume: Option<&Path>) -> Result<i32> {
    let data = Dataset::from_manifest(&read_manifest(cfg, &cfg.data.manifest, "data.manifest")?)?;
    let eval = if cfg.data.eval_manifest.is_empty() {
        None
    } else {
        Some(Dataset::from_manifest(&read_manifest(
            cfg,
            &cfg.data.eval_manifest,
            "data.eval_manifest",
        )?)?)
    };
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(&Checkpoint::load(p)?)?,
        None => Trainer::new(cfg, &data.labels)?,
    };
    if let Some(eval) = &eval {
        check_vocab(&trainer.model.labels, eval)?;
    }
    train_and_save(&mut trainer, &data, out)?;
    if let Some(eval) = eval {
        let report = evaluate(
            &trainer.model,
            &eval,
            &eval_options(cfg, EvalMode::Supervised),
        )?;
        write_eval(&out.join("eval.csv"), &report)?;
        println!("eval top1 {:.4}", report.top1);
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(cfg: &Config, checkpoint: &Path, out: &Path) -> Result<i32> {
    let key = if cfg.data.eval_manifest.is_empty() {
        "data.manifest"
    } else {
        "data.eval_manifest"
    };
    let path = if cfg.data.eval_manifest.is_empty() {
        &cfg.data.manifest
    } else {
        &cfg.data.eval_manifest
    };
    let data = Dataset::from_manifest(&read_manifest(cfg, path, key)?)?;
    let trainer = Trainer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let report = evaluate(
        &trainer.model,
        &data,
        &eval_options(cfg, EvalMode::Supervised),
    )?;
    create_out(out)?;
    write_eval(&out.join("eval.csv"), &report)?;
    println!("top1 {:.4} over {} clips", report.top1, data.len());
    Ok(EXIT_OK)
}

/// Accuracy of each repetition and their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotReport {
    pub runs: Vec<(Vec<String>, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl ZeroShotReport {
    pub fn from_runs(runs: Vec<(Vec<String>, f64)>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = runs.iter().map(|r| r.1).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / n;
        Self {
            runs,
            mean,
            std: var.sqrt(),
        }
    }
}

fn check_zero_shot(cfg: &Config, eval: &Dataset) -> Result<()> {
    let zs = cfg.zeroshot;
    if zs.pool != 0 && eval.labels.len() != zs.pool {
        return Err(Error::Config(format!(
            "zeroshot.pool is {} but the eval set has {} labels",
            zs.pool,
            eval.labels.len()
        )));
    }
    if zs.subset > eval.labels.len() {
        return Err(Error::Config(format!(
            "zeroshot.subset {} exceeds the {} eval labels",
            zs.subset,
            eval.labels.len()
        )));
    }
    Ok(())
}

/// Supervised evaluation needs every eval label in the training vocabulary.
fn check_vocab(train: &[String], eval: &Dataset) -> Result<()> {
    match eval.labels.iter().find(|l| !train.contains(l)) {
        Some(l) => Err(Error::Data(format!(
            "eval label `{l}` is not among the training labels"
        ))),
        None => Ok(()),
    }
}

/// Classifies `eval` against its own labels, `repeats` times over random
/// label subsets of size `subset` (0 = all labels).
pub fn zero_shot_protocol(model: &Model, eval: &Dataset, cfg: &Config) -> Result<ZeroShotReport> {
    check_zero_shot(cfg, eval)?;
    let zs = cfg.zeroshot;
    let opts = eval_options(cfg, EvalMode::ZeroShot);
    let mut runs = Vec::with_capacity(zs.repeats);
    for r in 0..zs.repeats {
        let mut labels = eval.labels.clone();
        if zs.subset != 0 && zs.subset < labels.len() {
            Rng::derive(cfg.train.seed, 5000 + r as u64).shuffle(&mut labels);
            labels.truncate(zs.subset);
            labels.sort();
        }
        let subset = eval.filter_labels(&labels)?;
        runs.push((labels, evaluate(model, &subset, &opts)?.top1));
    }
    Ok(ZeroShotReport::from_runs(runs))
}

pub fn cmd_zeroshot(cfg: &Config, checkpoint: Option<&Path>, out: &Path) -> Result<i32> {
    let eval = Dataset::from_manifest(&read_manifest(
        cfg,
        &cfg.data.eval_manifest,
        "data.eval_manifest",
    )?)?;
    let (mut trainer, train) = match checkpoint {
        Some(p) => (Trainer::from_checkpoint(&Checkpoint::load(p)?)?, None),
        None => {
            let train =
                Dataset::from_manifest(&read_manifest(cfg, &cfg.data.manifest, "data.manifest")?)?;
            (Trainer::new(cfg, &train.labels)?, Some(train))
        }
    };
    if let Some(l) = eval
        .labels
        .iter()
        .find(|l| trainer.model.labels.contains(l))
    {
        return Err(Error::Data(format!(
            "eval label `{l}` also appears in the training labels"
        )));
    }
    check_zero_shot(cfg, &eval)?;
    match train {
        Some(train) => {
            train_and_save(&mut trainer, &train, out)?;
        }
        None => create_out(out)?,
    }
    let report = zero_shot_protocol(&trainer.model, &eval, cfg)?;
    let mut csv = String::from("repeat,labels,top1\n");
    for (i, (labels, acc)) in report.runs.iter().enumerate() {
        csv.push_str(&format!("{},\"{}\",{}\n", i, labels.join(";"), acc));
    }
    fs::write(out.join("zeroshot.csv"), csv)?;
    let summary = format!(
        "top1 {:.4} ± {:.4} over {} repeats\n",
        report.mean,
        report.std,
        report.runs.len()
    );
    fs::write(out.join("zeroshot.txt"), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

pub fn cmd_fewshot(cfg: &Config, out: &Path) -> Result<i32> {
    let full = read_manifest(cfg, &cfg.data.manifest, "data.manifest")?;
    let test = Dataset::from_manifest(&read_manifest(
        cfg,
        &cfg.data.eval_manifest,
        "data.eval_manifest",
    )?)?;
    let split = few_shot_split(&full, cfg.shots, cfg.train.seed)?;
    let data = Dataset::from_manifest(&split)?;
    check_vocab(&data.labels, &test)?;
    let mut trainer = Trainer::new(cfg, &data.labels)?;
    train_and_save(&mut trainer, &data, out)?;
    let report = evaluate(
        &trainer.model,
        &test,
        &eval_options(cfg, EvalMode::Supervised),
    )?;
    write_eval(&out.join("eval.csv"), &report)?;
    println!("{}-shot test top1 {:.4}", cfg.shots, report.top1);
    Ok(EXIT_OK)
}

pub fn cmd_flops(cfg: &Config, out: &Path) -> Result<i32> {
    let f = &cfg.flops;
    let base = CostShape {
        frames: 1,
        patches: f.patches,
        dim: f.dim,
        heads: f.heads,
        layers: f.layers,
    };
    let instrument = if f.instrument {
        Instrument::OneLayer
    } else {
        Instrument::Off
    };
    let report = CostReport::build(&base, &f.frames, instrument)?;
    create_out(out)?;
    let mut file = fs::File::create(out.join("flops.csv"))?;
    report.write_csv(&mut file)?;
    file.flush()?;
    report.write_csv(std::io::stdout())?;
    Ok(EXIT_OK)
}

fn gradcheck_table(report: &GradCheckReport) -> String {
    let mut s = String::from("group,max_rel_error\n");
    for g in &report.groups {
        s.push_str(&format!("{},{:e}\n", g.name, g.max_rel_err));
    }
    s
}

pub fn cmd_gradcheck(cfg: &Config, corrupt: bool, out: Option<&Path>) -> Result<i32> {
    let report = crate::train::gradcheck_model(cfg, corrupt)?;
    let table = gradcheck_table(&report);
    if let Some(out) = out {
        create_out(out)?;
        fs::write(out.join("gradcheck.csv"), &table)?;
    }
    print!("{table}");
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: max relative error {:e} (tol {:e}) over {} groups",
        report.max_rel_err,
        report.tol,
        report.groups.len()
    );
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    })
}
