//! Fine-tuning head: alignment, iterative cross-modal interaction, local-global
//! fusion and the pyramid refiner.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frontend::positional_table;
use crate::graph::{BatchStats, Graph, Var};
use crate::nn::{Attention, EncoderStack, LayerNorm, Linear};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub embed_dim: usize,
    pub heads: usize,
    /// Shared sequence length after alignment.
    pub seq_len: usize,
    pub video_len: usize,
    pub audio_len: usize,
    pub rounds: usize,
    pub fusion_depth: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub init_std: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            heads: 4,
            seq_len: 16,
            video_len: 128,
            audio_len: 16,
            rounds: 3,
            fusion_depth: 2,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            init_std: 0.02,
        }
    }
}

fn conv_len(len: usize) -> usize {
    (len + 2 - 3) / 2 + 1
}

/// `(weight, bias)` of a `k × C_in × C_out` convolution.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, stride: usize) -> Self {
        let std = 1.0 / libm::sqrt((3 * c) as f64);
        Self {
            w: store.add(&format!("{name}.w"), init.normal_with(&[3, c, c], std)),
            b: store.add(&format!("{name}.b"), Tensor::zeros(&[c])),
            stride,
            padding: 1,
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        g.conv1d(x, w, b, self.stride, self.padding)
    }
}

/// Convolution chain followed by a learned length projection `P · X`.
#[derive(Debug, Clone)]
pub struct Align {
    pub convs: Vec<Conv>,
    pub length_proj: ParamId,
}

impl Align {
    /// Stride-2 convolutions while the length exceeds `target`; a single
    /// stride-1 convolution when it does not.
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, len: usize, target: usize) -> Result<Self> {
        if len == 0 || target == 0 {
            return Err(Error::DegenerateLength { op: "align" });
        }
        let mut convs = Vec::new();
        let mut cur = len;
        while cur > target {
            convs.push(Conv::new(store, init, &format!("{name}.conv{}", convs.len()), c, 2));
            cur = conv_len(cur);
        }
        if convs.is_empty() {
            convs.push(Conv::new(store, init, &format!("{name}.conv0"), c, 1));
        }
        let length_proj = store.add(&format!("{name}.length_proj"), pooling_matrix(target, cur));
        Ok(Self { convs, length_proj })
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let mut x = x;
        for c in &self.convs {
            x = c.forward(g, s, x)?;
        }
        let p = g.param(s, self.length_proj);
        g.matmul(p, x)
    }
}

/// `rows × cols` matrix averaging contiguous spans; the identity when square.
pub fn pooling_matrix(rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let a = r * cols / rows;
        let b = ((r + 1) * cols / rows).max(a + 1).min(cols);
        for c in a..b {
            t.data_mut()[r * cols + c] = 1.0 / (b - a) as f64;
        }
    }
    t
}

/// Gated cross-modal interaction for one direction.
#[derive(Debug, Clone)]
pub struct InteractionLayer {
    pub cross: Attention,
    pub gate_hidden: Linear,
    pub gate_out: Linear,
    pub norm: LayerNorm,
}

impl InteractionLayer {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            cross: Attention::new(store, init, &format!("{name}.cross"), c, heads)?,
            gate_hidden: Linear::new(store, init, &format!("{name}.gate_hidden"), 2 * c, c),
            gate_out: Linear::new(store, init, &format!("{name}.gate_out"), c, c),
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
        })
    }

    /// `LN(F_c + (1 − G) ⊙ F_c + G ⊙ A)` with `A = MHCA(F_c, F_o)`.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, fc: Var, fo: Var) -> Result<Var> {
        let a = self.cross.mhca(g, s, fc, fo)?;
        let gate = self.gate(g, s, fc, a)?;
        let delta = g.sub(a, fc)?;
        let gd = g.mul(gate, delta)?;
        let fu = g.add(fc, gd)?;
        let r = g.add(fc, fu)?;
        self.norm.forward(g, s, r)
    }

    pub fn gate(&self, g: &mut Graph, s: &ParamStore, fc: Var, a: Var) -> Result<Var> {
        let cat = g.concat_cols(&[fc, a])?;
        let h = self.gate_hidden.forward(g, s, cat)?;
        let h = g.relu(h)?;
        let logits = self.gate_out.forward(g, s, h)?;
        g.sigmoid(logits)
    }
}

/// `rounds` rounds; each round updates both modalities from the other's previous output.
pub fn iterative_interact(
    g: &mut Graph,
    s: &ParamStore,
    video_layers: &[InteractionLayer],
    audio_layers: &[InteractionLayer],
    mut v: Var,
    mut a: Var,
) -> Result<(Var, Var)> {
    for (lv, la) in video_layers.iter().zip(audio_layers) {
        let nv = lv.forward(g, s, v, a)?;
        let na = la.forward(g, s, a, v)?;
        (v, a) = (nv, na);
    }
    Ok((v, a))
}

#[derive(Debug, Clone)]
pub struct LocalGlobal {
    pub cls_token: ParamId,
    pub stack: EncoderStack,
    pub gate: Linear,
}

impl LocalGlobal {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize, depth: usize) -> Result<Self> {
        Ok(Self {
            cls_token: store.add(&format!("{name}.cls_token"), init.normal(&[1, c])),
            stack: EncoderStack::new(store, init, &format!("{name}.stack"), c, heads, depth)?,
            gate: Linear::new(store, init, &format!("{name}.gate"), 2 * c, c),
        })
    }

    /// `F_l ⊙ σ(Concat(F_l, F_g) Ŵ_g + b)`, a `2L × C` result.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, v: Var, a: Var) -> Result<Var> {
        if g.value(v).shape() != g.value(a).shape() {
            return Err(crate::error::dim_err("local_global_fuse", g.value(v).shape(), g.value(a).shape()));
        }
        let n = 2 * g.value(v).shape()[0];
        let cls = g.param(s, self.cls_token);
        let seq = g.concat_rows(&[cls, v, a])?;
        let out = self.stack.forward(g, s, seq)?;
        let fg = g.slice_rows(out, 0, 1)?;
        let fl = g.slice_rows(out, 1, n)?;
        let fg = g.repeat_rows(fg, n)?;
        let cat = g.concat_cols(&[fl, fg])?;
        let logits = self.gate.forward(g, s, cat)?;
        let gate = g.sigmoid(logits)?;
        g.mul(fl, gate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with the statistics of the current batch.
    Train,
    /// Normalise with the stored running averages.
    Eval,
}

#[derive(Debug, Clone)]
pub struct RefinerStage {
    pub conv: Conv,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Debug, Clone)]
pub struct Refiner {
    pub stages: Vec<RefinerStage>,
    pub aggregate: Linear,
    pub norm: LayerNorm,
    pub classifier: Linear,
    pub bn_eps: f64,
}

/// Logits for a batch plus the batch statistics of every refiner stage.
#[derive(Debug, Clone)]
pub struct RefinerOutput {
    pub logits: Var,
    pub stats: Vec<BatchStats>,
}

impl Refiner {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, bn_eps: f64) -> Self {
        let stages = (0..3)
            .map(|i| {
                let n = format!("{name}.stage{i}");
                RefinerStage {
                    conv: Conv::new(store, init, &format!("{n}.conv"), c, 2),
                    gamma: store.add(&format!("{n}.bn.gamma"), Tensor::full(&[c], 1.0)),
                    beta: store.add(&format!("{n}.bn.beta"), Tensor::zeros(&[c])),
                    running_mean: store.add_buffer(&format!("{n}.bn.running_mean"), Tensor::zeros(&[c])),
                    running_var: store.add_buffer(&format!("{n}.bn.running_var"), Tensor::full(&[c], 1.0)),
                }
            })
            .collect();
        Self {
            stages,
            aggregate: Linear::new(store, init, &format!("{name}.aggregate"), 3 * c, c),
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
            classifier: Linear::new(store, init, &format!("{name}.classifier"), c, 2),
            bn_eps,
        }
    }

    /// Refines every `2L × C` sequence of the batch; batch norm pools rows across the batch.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, batch: &[Var], mode: BnMode) -> Result<RefinerOutput> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("pyramid_refine"));
        }
        let mut seqs = batch.to_vec();
        let mut taps: Vec<Vec<Var>> = alloc::vec![Vec::new(); batch.len()];
        let mut stats = Vec::new();
        for st in &self.stages {
            let conv: Vec<Var> = seqs.iter().map(|&x| st.conv.forward(g, s, x)).collect::<Result<_>>()?;
            let len = g.value(conv[0]).shape()[0];
            let stacked = g.concat_rows(&conv)?;
            let gamma = g.param(s, st.gamma);
            let beta = g.param(s, st.beta);
            let normed = match mode {
                BnMode::Train => {
                    let (y, bs) = g.batch_norm_train(stacked, gamma, beta, self.bn_eps)?;
                    stats.push(bs);
                    y
                }
                BnMode::Eval => {
                    let mean = s.get(st.running_mean).data().to_vec();
                    let var = s.get(st.running_var).data().to_vec();
                    g.batch_norm_eval(stacked, gamma, beta, &mean, &var, self.bn_eps)?
                }
            };
            let act = g.relu(normed)?;
            for (i, seq) in seqs.iter_mut().enumerate() {
                *seq = g.slice_rows(act, i * len, len)?;
                taps[i].push(g.mean_rows(*seq)?);
            }
        }
        let mut rows = Vec::with_capacity(batch.len());
        for t in &taps {
            rows.push(g.concat_cols(t)?);
        }
        let ms = g.concat_rows(&rows)?;
        let f = self.aggregate.forward(g, s, ms)?;
        let f = self.norm.forward(g, s, f)?;
        let logits = self.classifier.forward(g, s, f)?;
        Ok(RefinerOutput { logits, stats })
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running(&self, store: &mut ParamStore, stats: &[BatchStats], momentum: f64) {
        for (st, bs) in self.stages.iter().zip(stats) {
            for (id, new) in [(st.running_mean, &bs.mean), (st.running_var, &bs.var)] {
                for (r, n) in store.get_mut(id).data_mut().iter_mut().zip(new) {
                    *r = (1.0 - momentum) * *r + momentum * n;
                }
            }
        }
    }
}

/// The complete fine-tuning head.
#[derive(Debug, Clone)]
pub struct Head {
    pub cfg: HeadConfig,
    pub align_video: Align,
    pub align_audio: Align,
    pub video_layers: Vec<InteractionLayer>,
    pub audio_layers: Vec<InteractionLayer>,
    pub local_global: LocalGlobal,
    pub refiner: Refiner,
}

impl Head {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &HeadConfig) -> Result<Self> {
        let c = cfg.embed_dim;
        if 2 * cfg.seq_len < 8 {
            return Err(Error::Config(format!("sequence length {} too short for the refiner", cfg.seq_len)));
        }
        let layers = |store: &mut ParamStore, init: &mut Init, m: &str| {
            (0..cfg.rounds)
                .map(|r| InteractionLayer::new(store, init, &format!("head.interact.{m}.{r}"), c, cfg.heads))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            cfg: cfg.clone(),
            align_video: Align::new(store, init, "head.align.video", c, cfg.video_len, cfg.seq_len)?,
            align_audio: Align::new(store, init, "head.align.audio", c, cfg.audio_len, cfg.seq_len)?,
            video_layers: layers(store, init, "video")?,
            audio_layers: layers(store, init, "audio")?,
            local_global: LocalGlobal::new(store, init, "head.local_global", c, cfg.heads, cfg.fusion_depth)?,
            refiner: Refiner::new(store, init, "head.refiner", c, cfg.bn_eps),
        })
    }

    /// Aligned sequences with the shared positional table added to both.
    pub fn align(&self, g: &mut Graph, s: &ParamStore, v: Var, a: Var) -> Result<(Var, Var)> {
        let v = self.align_video.forward(g, s, v)?;
        let a = self.align_audio.forward(g, s, a)?;
        let pe = g.constant(positional_table(self.cfg.seq_len, self.cfg.embed_dim));
        Ok((g.add(v, pe)?, g.add(a, pe)?))
    }

    /// Fused `2L × C` sequence for one sample, before the refiner.
    pub fn fuse_sample(&self, g: &mut Graph, s: &ParamStore, v: Var, a: Var) -> Result<Var> {
        let (v, a) = self.align(g, s, v, a)?;
        let (v, a) = iterative_interact(g, s, &self.video_layers, &self.audio_layers, v, a)?;
        self.local_global.forward(g, s, v, a)
    }

    /// `B × 2` logits for a batch of encoder outputs.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, batch: &[(Var, Var)], mode: BnMode) -> Result<RefinerOutput> {
        let fused: Vec<Var> = batch.iter().map(|&(v, a)| self.fuse_sample(g, s, v, a)).collect::<Result<_>>()?;
        self.refiner.forward(g, s, &fused, mode)
    }
}
