//! Command-line entry points.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hola_core::gradsuite::{full_suite, TOLERANCE};
use hola_core::metrics::report;
use hola_core::pretrain::{init_backbone, pretrain_run, PretrainSample};
use hola_core::selftrain::{
    evaluate as evaluate_model, finetune as finetune_model, selftrain_loop, Detector, Label, LabeledSet, Origin,
    Validation,
};
use hola_core::ParamStore;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Stage};
use crate::config::RunConfig;
use crate::dataset::{generate, Dataset};
use crate::error::{Error, Result};
use crate::manifest::{ClassLabel, Split};
use crate::report::{write_header, JsonLines, Metrics};

#[derive(Debug, Parser)]
#[command(name = "hola", version, about = "Audio-visual deepfake detection on synthetic clips")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Preset name (`desk`, `tiny`) or path to a key = value file.
    #[arg(long, default_value = "desk")]
    pub config: String,
    /// Override one key, e.g. `--set finetune.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply_env()?;
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-reconstruction pre-training on the train and pool clips.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised fine-tuning on the train split, validated on the val split.
    Finetune {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pre-training or fine-tuning checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Fine-tuning with iterative pseudo-label injection from the pool split.
    Selftrain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Print acc, uar, wa_f1 and auc for a checkpoint or a predictions file.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// JSON lines of `{"id": ..., "fake_prob": ...}`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every operation and both training losses.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out } => gen_data(&config.resolve()?, &out),
        Command::Pretrain { config, data, out } => pretrain(&config.resolve()?, &data, &out),
        Command::Finetune {
            config,
            data,
            out,
            init,
        } => finetune(&config.resolve()?, &data, &out, init.as_deref()),
        Command::Selftrain {
            config,
            data,
            out,
            init,
        } => selftrain(&config.resolve()?, &data, &out, init.as_deref()),
        Command::Evaluate {
            config,
            data,
            checkpoint,
            predictions,
            split,
            out,
        } => {
            let split = Split::parse(&split).ok_or_else(|| Error::Config(format!("unknown split {split}")))?;
            let cfg = config.resolve()?;
            evaluate(&cfg, &data, checkpoint.as_deref(), predictions.as_deref(), split, out.as_deref())
        }
        Command::Gradcheck { config, out } => gradcheck(&config.resolve()?, out.as_deref()),
    }
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_header(out, "gen-data", cfg)?;
    let oracle = generate(&cfg.synth()?, cfg.splits()?, out)?;
    println!("wrote {} clips to {}", oracle.len(), out.display());
    Ok(())
}

fn pretrain(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    write_header(out, "pretrain", cfg)?;
    let ds = Dataset::open(data)?;
    let records: Vec<_> = ds.records.iter().filter(|r| r.split != Split::Val).collect();
    let fcfg = cfg.frontend()?;
    let targets = cfg.targets()?;
    let samples = ds
        .features(&records, &fcfg)?
        .values()
        .map(|f| PretrainSample::from_features(f, fcfg.audio_patch, &targets))
        .collect::<hola_core::Result<Vec<_>>>()?;
    let pcfg = cfg.pretrain()?;
    let (model, mut store) = init_backbone(&pcfg.backbone, cfg.init_seed(0)?)?;
    let mut log = JsonLines::create(&out.join("pretrain_steps.jsonl"))?;
    let mut failed = None;
    let history = pretrain_run(&model, &mut store, &samples, &pcfg, |s| {
        let rec = StepLine {
            step: s.step,
            l_a: s.l_a,
            l_v: s.l_v,
            total: s.total,
            lr: s.rate,
        };
        if let Err(e) = log.write(&rec) {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    for (epoch, mean) in history.epoch_means.iter().enumerate() {
        eprintln!("epoch {epoch}: mean loss {mean:.6}");
    }
    save(out, "pretrain.ckpt", Stage::Pretrain, cfg, store)
}

#[derive(Serialize)]
struct StepLine {
    step: usize,
    l_a: f64,
    l_v: f64,
    total: f64,
    lr: f64,
}

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    loss: f64,
    train_acc: f64,
    lr: f64,
    val: Option<Metrics>,
}

fn save(out: &Path, file: &str, stage: Stage, cfg: &RunConfig, params: ParamStore) -> Result<()> {
    let path = out.join(file);
    Checkpoint {
        stage,
        config: cfg.to_text(),
        params,
    }
    .save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}

/// A detector for `cfg`, optionally warm-started from a checkpoint.
fn detector(cfg: &RunConfig, init: Option<&Path>) -> Result<(Detector, ParamStore)> {
    let (model, mut store) = Detector::init(&cfg.detector()?, cfg.init_seed(1)?)?;
    if let Some(path) = init {
        let ckpt = Checkpoint::load(path)?;
        match ckpt.stage {
            Stage::Pretrain => {
                Detector::load_encoders(&mut store, &ckpt.params)?;
            }
            Stage::Finetune => load_all(&mut store, &ckpt.params)?,
        }
    }
    Ok((model, store))
}

/// Copies every tensor, requiring the two stores to hold the same names.
fn load_all(store: &mut ParamStore, from: &ParamStore) -> Result<()> {
    let n = store.load_prefix(from, "")?;
    if n != store.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {n} of the model's {} tensors",
            store.len()
        )));
    }
    Ok(())
}

struct Labeled {
    ids: Vec<String>,
    labels: Vec<Label>,
}

fn labeled(ds: &Dataset, split: Split) -> Result<Labeled> {
    let mut out = Labeled {
        ids: Vec::new(),
        labels: Vec::new(),
    };
    for r in ds.split(split) {
        let label = r
            .label
            .ok_or_else(|| Error::Config(format!("{} split has no labels", split.name())))?;
        out.ids.push(r.id.clone());
        out.labels.push(label.into());
    }
    Ok(out)
}

fn finetune(cfg: &RunConfig, data: &Path, out: &Path, init: Option<&Path>) -> Result<()> {
    write_header(out, "finetune", cfg)?;
    let ds = Dataset::open(data)?;
    let records: Vec<_> = ds.records.iter().filter(|r| r.split != Split::Pool).collect();
    let bank = ds.bank(&records, &cfg.frontend()?)?;
    let train = labeled(&ds, Split::Train)?;
    let val = labeled(&ds, Split::Val)?;
    let set = LabeledSet::from_ground_truth(train.ids.into_iter().zip(train.labels))?;
    let (model, mut store) = detector(cfg, init)?;
    let validation = (!val.ids.is_empty()).then_some(Validation {
        ids: &val.ids,
        labels: &val.labels,
    });
    let mut log = JsonLines::create(&out.join("finetune_epochs.jsonl"))?;
    let mut failed = None;
    finetune_model(&model, &mut store, &set, &bank, validation, &cfg.finetune()?, |r| {
        let line = EpochLine {
            epoch: r.epoch,
            loss: r.loss,
            train_acc: r.train_acc,
            lr: r.rate,
            val: r.val.as_ref().map(Metrics::from),
        };
        eprintln!("epoch {}: loss {:.4} train_acc {:.3}", r.epoch, r.loss, r.train_acc);
        if let Err(e) = log.write(&line) {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    save(out, "finetune.ckpt", Stage::Finetune, cfg, store)
}

#[derive(Serialize)]
struct IterationLine {
    iteration: usize,
    train_size: usize,
    injected_real: usize,
    injected_fake: usize,
    pool_remaining: usize,
    loss: f64,
    train_acc: f64,
    val: Option<Metrics>,
}

#[derive(Serialize)]
struct InjectedLine<'a> {
    iteration: usize,
    id: &'a str,
    label: ClassLabel,
    confidence: f64,
}

fn selftrain(cfg: &RunConfig, data: &Path, out: &Path, init: Option<&Path>) -> Result<()> {
    write_header(out, "selftrain", cfg)?;
    let ds = Dataset::open(data)?;
    let all: Vec<_> = ds.records.iter().collect();
    let bank = ds.bank(&all, &cfg.frontend()?)?;
    let train = labeled(&ds, Split::Train)?;
    let val = labeled(&ds, Split::Val)?;
    let mut set = LabeledSet::from_ground_truth(train.ids.into_iter().zip(train.labels))?;
    let mut pool: Vec<String> = ds.split(Split::Pool).iter().map(|r| r.id.clone()).collect();
    let (model, mut store) = detector(cfg, init)?;
    let validation = (!val.ids.is_empty()).then_some(Validation {
        ids: &val.ids,
        labels: &val.labels,
    });
    let mut iterations = JsonLines::create(&out.join("selftrain_iterations.jsonl"))?;
    let mut injected = JsonLines::create(&out.join("injected.jsonl"))?;
    let mut failed = None;
    let inj = cfg.injection()?;
    selftrain_loop(&model, &mut store, &mut set, &mut pool, &bank, validation, &inj, &cfg.finetune()?, |r, _| {
        let line = IterationLine {
            iteration: r.iteration,
            train_size: r.train_size,
            injected_real: r.injected_real,
            injected_fake: r.injected_fake,
            pool_remaining: r.pool_remaining,
            loss: r.final_epoch.loss,
            train_acc: r.final_epoch.train_acc,
            val: r.final_epoch.val.as_ref().map(Metrics::from),
        };
        eprintln!(
            "iteration {}: trained on {}, injected {} real and {} fake",
            r.iteration, r.train_size, r.injected_real, r.injected_fake
        );
        let mut res = iterations.write(&line);
        for rec in &r.injected {
            if let Origin::Pseudo { iteration, confidence } = rec.origin {
                let l = InjectedLine {
                    iteration,
                    id: &rec.id,
                    label: rec.label.into(),
                    confidence,
                };
                res = res.and_then(|_| injected.write(&l));
            }
        }
        if let Err(e) = res {
            failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    save(out, "selftrain.ckpt", Stage::Finetune, cfg, store)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Prediction {
    id: String,
    fake_prob: f64,
}

fn evaluate(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    split: Split,
    out: Option<&Path>,
) -> Result<()> {
    if let Some(dir) = out {
        write_header(dir, "evaluate", cfg)?;
    }
    let ds = Dataset::open(data)?;
    let set = labeled(&ds, split)?;
    let metrics = match (checkpoint, predictions) {
        (Some(path), _) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.stage != Stage::Finetune {
                return Err(Error::Config(format!("{} holds pre-training weights only", path.display())));
            }
            let model_cfg = RunConfig::parse(&ckpt.config)?;
            let (model, mut store) = Detector::init(&model_cfg.detector()?, 0)?;
            load_all(&mut store, &ckpt.params)?;
            let records = ds.split(split);
            let bank = ds.bank(&records, &model_cfg.frontend()?)?;
            let val = Validation {
                ids: &set.ids,
                labels: &set.labels,
            };
            evaluate_model(&model, &store, &bank, val)?
        }
        (None, Some(path)) => {
            let probs = read_predictions(path)?;
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (id, label) in set.ids.iter().zip(&set.labels) {
                let p = probs
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("{}: no prediction for {id}", path.display())))?;
                scores.push(*p);
                labels.push(label.index() as u8);
            }
            report(&scores, &labels)?
        }
        (None, None) => return Err(Error::Config("evaluate needs --checkpoint or --predictions".into())),
    };
    let line = serde_json::to_string(&Metrics::from(&metrics)).expect("metrics serialize");
    println!("{line}");
    if let Some(dir) = out {
        crate::error::write_file(&dir.join("metrics.json"), format!("{line}\n").as_bytes())?;
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let p: Prediction = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if !(0.0..=1.0).contains(&p.fake_prob) {
            return Err(bad(format!("fake_prob {} outside [0, 1]", p.fake_prob)));
        }
        if out.insert(p.id.clone(), p.fake_prob).is_some() {
            return Err(bad(format!("duplicate id {}", p.id)));
        }
    }
    Ok(out)
}

fn gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        write_header(dir, "gradcheck", cfg)?;
    }
    let suite = full_suite(cfg.seed()?)?;
    println!("{:<24} {:>12}  status", "check", "max_rel_err");
    for e in &suite {
        let status = if e.passed() { "ok" } else { "FAIL" };
        println!("{:<24} {:>12.3e}  {status}", e.name, e.max_rel_err);
    }
    println!("tolerance {TOLERANCE:e}");
    let failed: Vec<&str> = suite.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failed.join(", ")))
    }
}
