//! Supervised fine-tuning and pseudo-label self-training.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backbone::{BackboneConfig, ModalityEncoder};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head::{BnMode, Head, HeadConfig};
use crate::metrics::{report, MetricReport};
use crate::optim::{cosine_lr, AdamW, OptimConfig};
use crate::params::{Gradients, Init, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Self::Real
        } else {
            Self::Fake
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Origin {
    GroundTruth,
    Pseudo { iteration: usize, confidence: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub id: String,
    pub label: Label,
    pub origin: Origin,
}

/// Training records with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    records: Vec<LabeledRecord>,
    ids: BTreeSet<String>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ground_truth(items: impl IntoIterator<Item = (String, Label)>) -> Result<Self> {
        let mut set = Self::new();
        for (id, label) in items {
            set.insert(LabeledRecord {
                id,
                label,
                origin: Origin::GroundTruth,
            })?;
        }
        Ok(set)
    }

    /// Adds a record; an id that is already present is rejected.
    pub fn insert(&mut self, rec: LabeledRecord) -> Result<()> {
        if !self.ids.insert(rec.id.clone()) {
            return Err(Error::Config(format!("duplicate sample id {}", rec.id)));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[LabeledRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for r in &self.records {
            c[r.label.index()] += 1;
        }
        c
    }
}

/// Encoder inputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInput {
    pub video_patches: Tensor,
    pub audio_patches: Tensor,
}

pub type ClipBank = BTreeMap<String, ClipInput>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectorConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

/// Pre-trainable encoders plus the fine-tuning head. Encoder parameter names
/// match the pre-training backbone so weights can be copied by prefix.
#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub video_encoder: ModalityEncoder,
    pub audio_encoder: ModalityEncoder,
    pub head: Head,
}

impl Detector {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &DetectorConfig) -> Result<Self> {
        let b = &cfg.backbone;
        if cfg.head.embed_dim != b.embed_dim {
            return Err(Error::Config(format!(
                "head width {} differs from encoder width {}",
                cfg.head.embed_dim, b.embed_dim
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            video_encoder: ModalityEncoder::new(store, init, "video_encoder", b.video_patch_dim, b, b.video_depth)?,
            audio_encoder: ModalityEncoder::new(store, init, "audio_encoder", b.audio_patch_dim, b, b.audio_depth)?,
            head: Head::new(store, init, &cfg.head)?,
        })
    }

    pub fn init(cfg: &DetectorConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed, cfg.backbone.init_std);
        let model = Self::new(&mut store, &mut init, cfg)?;
        Ok((model, store))
    }

    /// Copies both modality encoders from a pre-training parameter set.
    pub fn load_encoders(store: &mut ParamStore, pretrained: &ParamStore) -> Result<usize> {
        Ok(store.load_prefix(pretrained, "video_encoder.")? + store.load_prefix(pretrained, "audio_encoder.")?)
    }

    /// `B × 2` logits and the refiner batch statistics.
    pub fn logits(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        batch: &[&ClipInput],
        mode: BnMode,
    ) -> Result<crate::head::RefinerOutput> {
        let mut feats = Vec::with_capacity(batch.len());
        for x in batch {
            let vp = g.constant(x.video_patches.clone());
            let ap = g.constant(x.audio_patches.clone());
            let v = self.video_encoder.encode_all(g, s, vp)?;
            let a = self.audio_encoder.encode_all(g, s, ap)?;
            feats.push((v, a));
        }
        self.head.forward(g, s, &feats, mode)
    }

    /// Class probabilities `[p_real, p_fake]` in evaluation mode.
    pub fn predict(&self, s: &ParamStore, inputs: &[&ClipInput]) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut g = Graph::new();
            let o = self.logits(&mut g, s, core::slice::from_ref(x), BnMode::Eval)?;
            out.push(softmax2(g.value(o.logits).row(0)));
        }
        Ok(out)
    }
}

pub fn softmax2(z: &[f64]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = (libm::exp(z[0] - m), libm::exp(z[1] - m));
    [a / (a + b), b / (a + b)]
}

/// Ids with known labels used for validation reporting.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub ids: &'a [String],
    pub labels: &'a [Label],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the training forward passes during the epoch.
    pub train_acc: f64,
    pub rate: f64,
    pub val: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub optim: OptimConfig,
    /// Validation metrics are computed every this many epochs and at the last epoch.
    pub eval_every: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig {
                epochs: 50,
                ..OptimConfig::default()
            },
            eval_every: 1,
        }
    }
}

fn lookup<'a>(bank: &'a ClipBank, id: &str) -> Result<&'a ClipInput> {
    bank.get(id).ok_or_else(|| Error::Config(format!("no clip for id {id}")))
}

/// Metrics of `model` on the given ids.
pub fn evaluate(model: &Detector, s: &ParamStore, bank: &ClipBank, val: Validation) -> Result<MetricReport> {
    let inputs = val.ids.iter().map(|id| lookup(bank, id)).collect::<Result<Vec<_>>>()?;
    let probs = model.predict(s, &inputs)?;
    let fake: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let labels: Vec<u8> = val.labels.iter().map(|l| l.index() as u8).collect();
    report(&fake, &labels)
}

/// Cross-entropy training of encoders and head, in place.
pub fn finetune(
    model: &Detector,
    store: &mut ParamStore,
    train: &LabeledSet,
    bank: &ClipBank,
    val: Option<Validation>,
    cfg: &FinetuneConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.optim.validate()?;
    if train.class_counts().contains(&0) {
        return Err(Error::SingleClass);
    }
    let inputs = train.records().iter().map(|r| lookup(bank, &r.id)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<usize> = train.records().iter().map(|r| r.label.index()).collect();
    let per_epoch = cfg.optim.steps_per_epoch(inputs.len());
    let total = per_epoch * cfg.optim.epochs;
    let mut opt = AdamW::new(store, &cfg.optim);
    let mut rng = Rng::new(cfg.optim.seed);
    let momentum = model.cfg.head.bn_momentum;
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.optim.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut rate = 0.0;
        for batch in order.chunks(cfg.optim.batch_size) {
            rate = cosine_lr(step, total, cfg.optim.learning_rate, cfg.optim.warmup_frac);
            let xs: Vec<&ClipInput> = batch.iter().map(|&i| inputs[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let out = model.logits(&mut g, store, &xs, BnMode::Train)?;
            let loss = g.softmax_cross_entropy(out.logits, &ys)?;
            let lv = g.value(loss).data()[0];
            correct += count_correct(&g, out.logits, &ys);
            g.backward(loss)?;
            let grads = Gradients::from_graph(&g, store);
            if !grads.is_finite() {
                return Err(Error::NonFinite { op: "finetune gradient" });
            }
            opt.step(store, &grads, rate);
            model.head.refiner.update_running(store, &out.stats, momentum);
            loss_sum += lv * batch.len() as f64;
            step += 1;
        }
        let last = epoch + 1 == cfg.optim.epochs;
        let val_report = match val {
            Some(v) if last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) => {
                Some(evaluate(model, store, bank, v)?)
            }
            _ => None,
        };
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / inputs.len() as f64,
            train_acc: correct as f64 / inputs.len() as f64,
            rate,
            val: val_report,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

fn count_correct(g: &Graph, logits: Var, ys: &[usize]) -> usize {
    let l = g.value(logits);
    ys.iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let r = l.row(i);
            (r[1] > r[0]) as usize == y
        })
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionConfig {
    pub threshold: f64,
    pub max_iterations: usize,
    /// Optional cap on pseudo labels added per class in one iteration.
    pub per_class_cap: Option<usize>,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.999,
            max_iterations: 5,
            per_class_cap: None,
        }
    }
}

impl InjectionConfig {
    /// Thresholds above one can never be met and switch injection off.
    pub fn enabled(&self) -> bool {
        self.threshold <= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.5) {
            return Err(Error::Config(format!("threshold {} must exceed 0.5", self.threshold)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Splits `pool` into confident pseudo-labelled records and the remainder.
/// `probs[i]` belongs to `pool[i]`. Within a class cap the most confident samples win.
pub fn select_confident(
    pool: &[String],
    probs: &[[f64; 2]],
    threshold: f64,
    iteration: usize,
    per_class_cap: Option<usize>,
) -> (Vec<LabeledRecord>, Vec<String>) {
    let mut chosen: Vec<(usize, Label, f64)> = Vec::new();
    for (i, p) in probs.iter().enumerate() {
        let (label, conf) = if p[1] > p[0] { (Label::Fake, p[1]) } else { (Label::Real, p[0]) };
        if conf >= threshold {
            chosen.push((i, label, conf));
        }
    }
    if let Some(cap) = per_class_cap {
        chosen.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let mut used = [0usize; 2];
        chosen.retain(|c| {
            used[c.1.index()] += 1;
            used[c.1.index()] <= cap
        });
        chosen.sort_by_key(|c| c.0);
    }
    let picked: BTreeSet<usize> = chosen.iter().map(|c| c.0).collect();
    let records = chosen
        .into_iter()
        .map(|(i, label, confidence)| LabeledRecord {
            id: pool[i].clone(),
            label,
            origin: Origin::Pseudo { iteration, confidence },
        })
        .collect();
    let remaining = pool
        .iter()
        .enumerate()
        .filter(|(i, _)| !picked.contains(i))
        .map(|(_, id)| id.clone())
        .collect();
    (records, remaining)
}

/// Runs inference over `pool` and selects confident samples.
pub fn inject_pseudo(
    model: &Detector,
    store: &ParamStore,
    pool: &[String],
    bank: &ClipBank,
    threshold: f64,
    iteration: usize,
    per_class_cap: Option<usize>,
) -> Result<(Vec<LabeledRecord>, Vec<String>)> {
    if pool.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let inputs = pool.iter().map(|id| lookup(bank, id)).collect::<Result<Vec<_>>>()?;
    let probs = model.predict(store, &inputs)?;
    Ok(select_confident(pool, &probs, threshold, iteration, per_class_cap))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub injected_real: usize,
    pub injected_fake: usize,
    /// Training-set size used for this iteration's fine-tuning.
    pub train_size: usize,
    pub pool_remaining: usize,
    pub final_epoch: EpochRecord,
    pub injected: Vec<LabeledRecord>,
}

/// Fine-tune, inject, grow; repeated up to `max_iterations` times with warm starts.
/// With injection disabled the loop stops after the first fine-tuning round.
pub fn selftrain_loop(
    model: &Detector,
    store: &mut ParamStore,
    train: &mut LabeledSet,
    pool: &mut Vec<String>,
    bank: &ClipBank,
    val: Option<Validation>,
    inj: &InjectionConfig,
    cfg: &FinetuneConfig,
    mut on_iteration: impl FnMut(&IterationReport, &ParamStore),
) -> Result<Vec<IterationReport>> {
    inj.validate()?;
    let mut reports = Vec::new();
    for iteration in 1..=inj.max_iterations {
        let mut round = cfg.clone();
        if iteration > 1 {
            round.optim.seed = Rng::new(cfg.optim.seed).fork(iteration as u64).seed();
        }
        let history = finetune(model, store, train, bank, val, &round, |_| {})?;
        let train_size = train.len();
        let (injected, remaining) = if inj.enabled() {
            inject_pseudo(model, store, pool, bank, inj.threshold, iteration, inj.per_class_cap)?
        } else {
            (Vec::new(), pool.clone())
        };
        for r in &injected {
            train.insert(r.clone())?;
        }
        *pool = remaining;
        let report = IterationReport {
            iteration,
            injected_real: injected.iter().filter(|r| r.label == Label::Real).count(),
            injected_fake: injected.iter().filter(|r| r.label == Label::Fake).count(),
            train_size,
            pool_remaining: pool.len(),
            final_epoch: history.last().cloned().expect("at least one epoch"),
            injected,
        };
        on_iteration(&report, store);
        reports.push(report);
        if !inj.enabled() {
            break;
        }
    }
    Ok(reports)
}
