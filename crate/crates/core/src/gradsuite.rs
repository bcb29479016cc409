//! The finite-difference suite: every differentiable graph operation plus the
//! composed pre-training and fine-tuning losses on tiny configurations.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backbone::BackboneConfig;
use crate::error::Result;
use crate::frontend::Grid;
use crate::gradcheck::{grad_check, grad_check_params};
use crate::graph::{Graph, Var};
use crate::head::{BnMode, HeadConfig};
use crate::masking::MaskConfig;
use crate::params::{Gradients, ParamStore};
use crate::pretrain::{draw_plans, init_backbone, sample_loss, PretrainSample, ReconNormalizer};
use crate::rng::Rng;
use crate::selftrain::{ClipInput, Detector, DetectorConfig};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_err: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range(-1.0, 1.0)).collect()).expect("shape matches data")
}

/// Reduces any output to a scalar through fixed random weights so every
/// output element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::new(seed);
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape));
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Keeps the worst error seen per name, in first-seen order.
fn check(out: &mut Vec<SuiteEntry>, name: &str, theta: &Tensor, f: impl FnMut(&mut Graph, Var) -> Result<Var>) -> Result<()> {
    let err = grad_check(f, theta, STEP)?;
    match out.iter_mut().find(|e| e.name == name) {
        Some(e) => e.max_rel_err = e.max_rel_err.max(err),
        None => out.push(SuiteEntry {
            name: name.to_string(),
            max_rel_err: err,
        }),
    }
    Ok(())
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (1 + rng.below(8), 1 + rng.below(8))
}

/// Checks every graph operation on `trials` random shapes with sides up to 8.
pub fn op_suite(trials: u64, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let mut rng = Rng::new(seed);
    for trial in 0..trials {
        let (r, c) = dims(&mut rng);
        let (_, k) = dims(&mut rng);
        let x = rand_tensor(&mut rng, &[r, c]);
        let other = rand_tensor(&mut rng, &[r, c]);
        let right = rand_tensor(&mut rng, &[c, k]);
        let row = rand_tensor(&mut rng, &[c]);
        let s = seed ^ trial;

        check(&mut out, "matmul.lhs", &x, |g, v| {
            let b = g.constant(right.clone());
            let y = g.matmul(v, b)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "matmul.rhs", &right, |g, v| {
            let a = g.constant(x.clone());
            let y = g.matmul(a, v)?;
            weighted_sum(g, y, s)
        })?;
        let rt = right.transpose().unwrap();
        check(&mut out, "matmul_nt.rhs", &rt, |g, v| {
            let a = g.constant(x.clone());
            let y = g.matmul_nt(a, v)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "matmul_nt.lhs", &x, |g, v| {
            let b = g.constant(rt.clone());
            let y = g.matmul_nt(v, b)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "transpose", &x, |g, v| {
            let y = g.transpose(v)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "add", &x, |g, v| {
            let o = g.constant(other.clone());
            let y = g.add(v, o)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "sub", &x, |g, v| {
            let o = g.constant(other.clone());
            let y = g.sub(o, v)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "mul", &x, |g, v| {
            let o = g.constant(other.clone());
            let y = g.mul(v, o)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "add_row", &row, |g, v| {
            let a = g.constant(x.clone());
            let y = g.add_row(a, v)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "mul_row.row", &row, |g, v| {
            let a = g.constant(x.clone());
            let y = g.mul_row(a, v)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "mul_row.x", &x, |g, v| {
            let b = g.constant(row.clone());
            let y = g.mul_row(v, b)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "affine", &x, |g, v| {
            let y = g.affine(v, -1.5, 0.25)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "sigmoid", &x, |g, v| {
            let y = g.sigmoid(v)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "relu", &x, |g, v| {
            let y = g.relu(v)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "gelu", &x, |g, v| {
            let y = g.gelu(v)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "softmax.rows", &x, |g, v| {
            let y = g.softmax(v, 1)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "softmax.cols", &x, |g, v| {
            let y = g.softmax(v, 0)?;
            weighted_sum(g, y, s)
        })?;
        if c > 1 {
            check(&mut out, "layer_norm.x", &x, |g, v| {
                let gamma = g.constant(row.clone());
                let beta = g.constant(row.clone());
                let y = g.layer_norm(v, gamma, beta, 1e-5)?;
                weighted_sum(g, y, s)
            })?;
        }
        check(&mut out, "layer_norm.gamma", &row, |g, v| {
            let a = g.constant(x.clone());
            let beta = g.constant(row.clone());
            let y = g.layer_norm(a, v, beta, 1e-5)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "layer_norm.beta", &row, |g, v| {
            let a = g.constant(x.clone());
            let gamma = g.constant(row.clone());
            let y = g.layer_norm(a, gamma, v, 1e-5)?;
            weighted_sum(g, y, s)
        })?;
        if r > 1 {
            check(&mut out, "batch_norm.x", &x, |g, v| {
                let gamma = g.constant(row.clone());
                let beta = g.constant(row.clone());
                let (y, _) = g.batch_norm_train(v, gamma, beta, 1e-5)?;
                weighted_sum(g, y, s)
            })?;
            check(&mut out, "batch_norm.gamma", &row, |g, v| {
                let a = g.constant(x.clone());
                let beta = g.constant(row.clone());
                let (y, _) = g.batch_norm_train(a, v, beta, 1e-5)?;
                weighted_sum(g, y, s)
            })?;
        }
        let mean: Vec<f64> = row.data().to_vec();
        let var: Vec<f64> = row.data().iter().map(|v| v * v + 0.5).collect();
        check(&mut out, "batch_norm_eval.x", &x, |g, v| {
            let gamma = g.constant(row.clone());
            let beta = g.constant(row.clone());
            let y = g.batch_norm_eval(v, gamma, beta, &mean, &var, 1e-5)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "concat_rows", &x, |g, v| {
            let o = g.constant(other.clone());
            let y = g.concat_rows(&[o, v, v])?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "concat_cols", &x, |g, v| {
            let o = g.constant(other.clone());
            let y = g.concat_cols(&[v, o, v])?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        let idx: Vec<usize> = (0..r + 2).map(|i| (i * 7) % r).collect();
        check(&mut out, "gather_rows", &x, |g, v| {
            let y = g.gather_rows(v, &idx)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "slice_cols", &x, |g, v| {
            let y = g.slice_cols(v, c / 2, c - c / 2)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        let one_row = rand_tensor(&mut rng, &[1, c]);
        check(&mut out, "repeat_rows", &one_row, |g, v| {
            let y = g.repeat_rows(v, r)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "mean_rows", &x, |g, v| {
            let y = g.mean_rows(v)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "sum", &x, |g, v| {
            let y = g.mul(v, v)?;
            g.sum(y)
        })?;
        check(&mut out, "mean", &x, |g, v| {
            let y = g.mul(v, v)?;
            g.mean(y)
        })?;
        check(&mut out, "sum_squares", &x, |g, v| g.sum_squares(v))?;
        check(&mut out, "mse", &x, |g, v| {
            let o = g.constant(other.clone());
            g.mse(v, o)
        })?;
        check(&mut out, "mse.rhs", &x, |g, v| {
            let o = g.constant(other.clone());
            g.mse(o, v)
        })?;
        let targets: Vec<usize> = (0..r).map(|i| i % c).collect();
        check(&mut out, "softmax_cross_entropy", &x, |g, v| g.softmax_cross_entropy(v, &targets))?;

        let l = 3 + rng.below(6);
        let cin = 1 + rng.below(4);
        let cout = 1 + rng.below(4);
        let kk = 1 + rng.below(3);
        let stride = 1 + rng.below(2);
        let seq = rand_tensor(&mut rng, &[l, cin]);
        let w = rand_tensor(&mut rng, &[kk, cin, cout]);
        let b = rand_tensor(&mut rng, &[cout]);
        check(&mut out, "conv1d.x", &seq, |g, v| {
            let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
            let y = g.conv1d(v, wv, bv, stride, 1)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "conv1d.w", &w, |g, v| {
            let (xv, bv) = (g.constant(seq.clone()), g.constant(b.clone()));
            let y = g.conv1d(xv, v, bv, stride, 1)?;
            weighted_sum(g, y, s)
        })?;
        check(&mut out, "conv1d.b", &b, |g, v| {
            let (xv, wv) = (g.constant(seq.clone()), g.constant(w.clone()));
            let y = g.conv1d(xv, wv, v, stride, 1)?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y, s)
        })?;
    }
    Ok(out)
}

fn randomize(store: &mut ParamStore, rng: &mut Rng, std: f64) {
    let ids: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += std * rng.normal();
        }
    }
}

fn worst(name: &str, checks: &[crate::gradcheck::ParamCheck]) -> SuiteEntry {
    SuiteEntry {
        name: name.to_string(),
        max_rel_err: checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max),
    }
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        embed_dim: 8,
        heads: 2,
        video_depth: 1,
        audio_depth: 1,
        fusion_depth: 1,
        decoder_depth: 1,
        video_patch_dim: 6,
        audio_patch_dim: 4,
        init_std: 0.02,
    }
}

/// Masked reconstruction loss of a tiny backbone over every trainable tensor.
pub fn pretrain_loss_check(seed: u64, coords: usize) -> Result<SuiteEntry> {
    let mut rng = Rng::new(seed);
    let sample = PretrainSample {
        video_patches: rand_tensor(&mut rng, &[32, 6]),
        audio_patches: rand_tensor(&mut rng, &[8, 4]),
        video_targets: rand_tensor(&mut rng, &[32, 6]),
        audio_targets: rand_tensor(&mut rng, &[8, 4]),
        video_grid: Grid::Video { t: 2, h: 4, w: 4 },
        audio_grid: Grid::Audio { t: 8, f: 1 },
    };
    let (model, mut store) = init_backbone(&tiny_backbone(), seed)?;
    // Larger weights make every path contribute measurably.
    randomize(&mut store, &mut rng, 0.3);
    let (vp, ap) = draw_plans(&MaskConfig::default(), seed, 0, 0, &sample)?;
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let (parts, total) = sample_loss(&mut g, s, &model, &sample, &vp, &ap, ReconNormalizer::Literal)?;
        g.backward(total)?;
        Ok((parts.total(), Gradients::from_graph(&g, s)))
    };
    Ok(worst("pretrain_loss", &grad_check_params(loss, &store, STEP, coords)?))
}

pub fn tiny_detector() -> DetectorConfig {
    DetectorConfig {
        backbone: tiny_backbone(),
        head: HeadConfig {
            embed_dim: 8,
            heads: 2,
            seq_len: 4,
            video_len: 16,
            audio_len: 4,
            rounds: 1,
            fusion_depth: 1,
            ..HeadConfig::default()
        },
    }
}

/// Batch cross-entropy of a tiny detector, batch norm in training mode.
pub fn finetune_loss_check(seed: u64, coords: usize) -> Result<SuiteEntry> {
    let mut rng = Rng::new(seed);
    let clips: Vec<ClipInput> = (0..3)
        .map(|_| ClipInput {
            video_patches: rand_tensor(&mut rng, &[16, 6]),
            audio_patches: rand_tensor(&mut rng, &[4, 4]),
        })
        .collect();
    let xs: Vec<&ClipInput> = clips.iter().collect();
    let ys = [0, 1, 1];
    let (model, mut store) = Detector::init(&tiny_detector(), seed)?;
    randomize(&mut store, &mut rng, 0.3);
    let loss = |s: &ParamStore| {
        let mut g = Graph::new();
        let out = model.logits(&mut g, s, &xs, BnMode::Train)?;
        let l = g.softmax_cross_entropy(out.logits, &ys)?;
        g.backward(l)?;
        Ok((g.value(l).data()[0], Gradients::from_graph(&g, s)))
    };
    Ok(worst("finetune_loss", &grad_check_params(loss, &store, STEP, coords)?))
}

/// Operations followed by both composed losses.
pub fn full_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = op_suite(10, seed)?;
    out.push(pretrain_loss_check(seed, 4)?);
    out.push(finetune_loss_check(seed, 4)?);
    Ok(out)
}
