//! Masked reconstruction objective and the pre-training loop.

use alloc::vec::Vec;

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::frontend::{normalize_rows, ClipFeatures, Grid};
use crate::graph::{Graph, Var};
use crate::masking::{MaskConfig, MaskPlan};
use crate::optim::{cosine_lr, AdamW, OptimConfig};
use crate::params::{Gradients, Init, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// How the summed squared error is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconNormalizer {
    /// Divide by `(1 − λ) · N`, with λ the encoder mask ratio and N the token count.
    #[default]
    Literal,
    /// Divide by the number of loss positions.
    MeanOverLossSet,
}

impl ReconNormalizer {
    pub fn denominator(self, plan: &MaskPlan) -> f64 {
        match self {
            Self::Literal => (1.0 - plan.lambda_enc) * plan.len() as f64,
            Self::MeanOverLossSet => plan.loss_positions.len() as f64,
        }
    }
}

/// Squared reconstruction error over the loss positions of `plan`.
/// `pred` and `target` hold one row per loss position.
pub fn recon_loss(g: &mut Graph, pred: Var, target: Var, plan: &MaskPlan, norm: ReconNormalizer) -> Result<Var> {
    if plan.loss_positions.is_empty() {
        return Err(Error::DegeneratePlan);
    }
    let rows = g.value(pred).shape()[0];
    if rows != plan.loss_positions.len() {
        return Err(crate::error::dim_err("recon_loss", &[plan.loss_positions.len()], &[rows]));
    }
    let diff = g.sub(pred, target)?;
    let ss = g.sum_squares(diff)?;
    g.scale(ss, 1.0 / norm.denominator(plan))
}

pub fn total_loss(g: &mut Graph, l_a: Var, l_v: Var) -> Result<Var> {
    g.add(l_a, l_v)
}

/// Inputs and normalised reconstruction targets for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSample {
    pub video_patches: Tensor,
    pub audio_patches: Tensor,
    pub video_targets: Tensor,
    pub audio_targets: Tensor,
    pub video_grid: Grid,
    pub audio_grid: Grid,
}

/// Variance floors for per-patch target normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetConfig {
    pub video_eps: f64,
    pub audio_eps: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            video_eps: 1e-1,
            audio_eps: 1e-6,
        }
    }
}

impl PretrainSample {
    pub fn from_features(f: &ClipFeatures, audio_patch: usize, t: &TargetConfig) -> Result<Self> {
        let (raw_audio, _) = crate::frontend::audio_patches(&f.mfcc, audio_patch)?;
        Ok(Self {
            video_patches: f.video_patches.clone(),
            audio_patches: f.audio_patches.clone(),
            video_targets: normalize_rows(&f.video_patches, t.video_eps)?,
            audio_targets: normalize_rows(&raw_audio, t.audio_eps)?,
            video_grid: f.video_grid,
            audio_grid: f.audio_grid,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub l_a: f64,
    pub l_v: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.l_a + self.l_v
    }
}

/// Builds the graph for one sample and returns the loss parts and the total loss node.
pub fn sample_loss(
    g: &mut Graph,
    s: &ParamStore,
    model: &Backbone,
    sample: &PretrainSample,
    video_plan: &MaskPlan,
    audio_plan: &MaskPlan,
    norm: ReconNormalizer,
) -> Result<(LossParts, Var)> {
    let (rv, ra) = model.reconstruct(g, s, &sample.video_patches, &sample.audio_patches, video_plan, audio_plan)?;
    let tv = g.constant(gather(&sample.video_targets, &video_plan.loss_positions));
    let ta = g.constant(gather(&sample.audio_targets, &audio_plan.loss_positions));
    let l_v = recon_loss(g, rv, tv, video_plan, norm)?;
    let l_a = recon_loss(g, ra, ta, audio_plan, norm)?;
    let total = total_loss(g, l_a, l_v)?;
    let parts = LossParts {
        l_a: g.value(l_a).data()[0],
        l_v: g.value(l_v).data()[0],
    };
    Ok((parts, total))
}

fn gather(x: &Tensor, rows: &[usize]) -> Tensor {
    let c = x.shape()[1];
    let data = rows.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
    Tensor::new(&[rows.len(), c], data).expect("gathered rows")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub backbone: BackboneConfig,
    pub masks: MaskConfig,
    pub optim: OptimConfig,
    pub normalizer: ReconNormalizer,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            masks: MaskConfig::default(),
            optim: OptimConfig::default(),
            normalizer: ReconNormalizer::Literal,
        }
    }
}

/// Mean losses over one optimiser step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_a: f64,
    pub l_v: f64,
    pub total: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainHistory {
    pub steps: Vec<StepRecord>,
    pub epoch_means: Vec<f64>,
}

/// A fresh backbone with parameters drawn from `seed`.
pub fn init_backbone(cfg: &BackboneConfig, seed: u64) -> Result<(Backbone, ParamStore)> {
    let mut store = ParamStore::new();
    let mut init = Init::new(seed, cfg.init_std);
    let model = Backbone::new(&mut store, &mut init, cfg)?;
    Ok((model, store))
}

/// Masks for sample `index` at `epoch`, reproducible from the run seed alone.
pub fn draw_plans(masks: &MaskConfig, seed: u64, epoch: usize, index: usize, sample: &PretrainSample) -> Result<(MaskPlan, MaskPlan)> {
    let mut rng = Rng::new(seed).fork(((epoch as u64) << 32) | index as u64);
    let v = masks.video_plan(sample.video_grid, &mut rng)?;
    let a = masks.audio_plan(sample.audio_grid, &mut rng)?;
    Ok((v, a))
}

/// Trains `store` in place. Each step averages the gradient over one mini-batch;
/// samples are shuffled per epoch and fresh masks are drawn for every visit.
pub fn pretrain_run(
    model: &Backbone,
    store: &mut ParamStore,
    data: &[PretrainSample],
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<PretrainHistory> {
    if data.is_empty() {
        return Err(Error::EmptyInput("pretrain dataset"));
    }
    cfg.optim.validate()?;
    let per_epoch = cfg.optim.steps_per_epoch(data.len());
    let total_steps = per_epoch * cfg.optim.epochs;
    let mut opt = AdamW::new(store, &cfg.optim);
    let mut order_rng = Rng::new(cfg.optim.seed).fork(u64::MAX);
    let mut history = PretrainHistory::default();
    let mut step = 0;
    for epoch in 0..cfg.optim.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order_rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.optim.batch_size) {
            let rate = cosine_lr(step, total_steps, cfg.optim.learning_rate, cfg.optim.warmup_frac);
            let mut grads = Gradients::zeros_like(store);
            let (mut l_a, mut l_v) = (0.0, 0.0);
            for &i in batch {
                let (vp, ap) = draw_plans(&cfg.masks, cfg.optim.seed, epoch, i, &data[i])?;
                let mut g = Graph::new();
                let (parts, total) = sample_loss(&mut g, store, model, &data[i], &vp, &ap, cfg.normalizer)
                    .map_err(|e| diverged(e, step))?;
                g.backward(total)?;
                grads.accumulate_graph(&g, store);
                l_a += parts.l_a;
                l_v += parts.l_v;
            }
            let b = batch.len() as f64;
            grads.scale(1.0 / b);
            if !grads.is_finite() {
                return Err(Error::Diverged {
                    step,
                    modality: "gradient",
                    l_a: l_a / b,
                    l_v: l_v / b,
                });
            }
            opt.step(store, &grads, rate);
            let rec = StepRecord {
                step,
                l_a: l_a / b,
                l_v: l_v / b,
                total: (l_a + l_v) / b,
                rate,
            };
            on_step(&rec);
            epoch_sum += rec.total;
            history.steps.push(rec);
            step += 1;
        }
        history.epoch_means.push(epoch_sum / per_epoch as f64);
    }
    Ok(history)
}

fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            step,
            modality: op,
            l_a: f64::NAN,
            l_v: f64::NAN,
        },
        other => other,
    }
}
