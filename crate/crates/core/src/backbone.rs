//! Modality encoders, the audio-visual fusion encoder and the reconstruction decoders.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frontend::positional_rows;
use crate::graph::{Graph, Var};
use crate::masking::MaskPlan;
use crate::nn::{Attention, EncoderStack, FeedForward, LayerNorm, Linear};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub video_depth: usize,
    pub audio_depth: usize,
    pub fusion_depth: usize,
    pub decoder_depth: usize,
    pub video_patch_dim: usize,
    pub audio_patch_dim: usize,
    pub init_std: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            heads: 4,
            video_depth: 4,
            audio_depth: 3,
            fusion_depth: 2,
            decoder_depth: 2,
            video_patch_dim: 2 * 8 * 8 * 3,
            audio_patch_dim: 32,
            init_std: 0.02,
        }
    }
}

/// Patch embedding followed by a transformer stack.
#[derive(Debug, Clone)]
pub struct ModalityEncoder {
    pub embed: Linear,
    pub stack: EncoderStack,
}

impl ModalityEncoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        patch_dim: usize,
        cfg: &BackboneConfig,
        depth: usize,
    ) -> Result<Self> {
        Ok(Self {
            embed: Linear::with_std(
                store,
                init,
                &format!("{name}.embed"),
                patch_dim,
                cfg.embed_dim,
                1.0 / libm::sqrt(patch_dim as f64),
            ),
            stack: EncoderStack::new(store, init, &format!("{name}.stack"), cfg.embed_dim, cfg.heads, depth)?,
        })
    }

    /// Embeds the patches at `positions`, adds their positional rows and runs the stack.
    /// `positions` may be in any order; output row `i` belongs to `positions[i]`.
    pub fn encode_positions(&self, g: &mut Graph, s: &ParamStore, patches: Var, positions: &[usize]) -> Result<Var> {
        if positions.is_empty() {
            return Err(Error::AllMasked);
        }
        let x = g.gather_rows(patches, positions)?;
        let x = self.embed.forward(g, s, x)?;
        let c = g.value(x).shape()[1];
        let pe = g.constant(positional_rows(positions, c));
        let x = g.add(x, pe)?;
        self.stack.forward(g, s, x)
    }

    /// Encodes every token.
    pub fn encode_all(&self, g: &mut Graph, s: &ParamStore, patches: Var) -> Result<Var> {
        let n = g.value(patches).shape()[0];
        let all: Vec<usize> = (0..n).collect();
        self.encode_positions(g, s, patches, &all)
    }
}

/// Latents over the encoder-visible positions of `plan`, in increasing position order.
pub fn encode_visible(
    g: &mut Graph,
    s: &ParamStore,
    enc: &ModalityEncoder,
    patches: Var,
    plan: &MaskPlan,
) -> Result<(Var, Vec<usize>)> {
    let n = g.value(patches).shape()[0];
    if n != plan.len() {
        return Err(crate::error::dim_err("encode_visible", &[plan.len()], &[n]));
    }
    let visible = plan.encoder_visible();
    let x = enc.encode_positions(g, s, patches, &visible)?;
    Ok((x, visible))
}

/// One modality's half of a fusion block.
#[derive(Debug, Clone)]
pub struct FusionHalf {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_query: LayerNorm,
    pub ln_context: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl FusionHalf {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), c),
            self_attn: Attention::new(store, init, &format!("{name}.self_attn"), c, heads)?,
            ln_query: LayerNorm::new(store, &format!("{name}.ln_query"), c),
            ln_context: LayerNorm::new(store, &format!("{name}.ln_context"), c),
            cross_attn: Attention::new(store, init, &format!("{name}.cross_attn"), c, heads)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), c),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), c, 4 * c),
        })
    }

    fn self_step(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ln_self.forward(g, s, x)?;
        let h = self.self_attn.mhsa(g, s, h)?;
        g.add(x, h)
    }

    fn cross_step(&self, g: &mut Graph, s: &ParamStore, x: Var, other: Var) -> Result<Var> {
        let q = self.ln_query.forward(g, s, x)?;
        let kv = self.ln_context.forward(g, s, other)?;
        let h = self.cross_attn.mhca(g, s, q, kv)?;
        let x = g.add(x, h)?;
        let h = self.ln_ffn.forward(g, s, x)?;
        let h = self.ffn.forward(g, s, h)?;
        g.add(x, h)
    }
}

/// Self-attention within each modality, then cross-attention against the other.
#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub video: FusionHalf,
    pub audio: FusionHalf,
}

impl FusionBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            video: FusionHalf::new(store, init, &format!("{name}.video"), c, heads)?,
            audio: FusionHalf::new(store, init, &format!("{name}.audio"), c, heads)?,
        })
    }

    /// Both modalities update from the other's post-self-attention state.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, v: Var, a: Var) -> Result<(Var, Var)> {
        let v1 = self.video.self_step(g, s, v)?;
        let a1 = self.audio.self_step(g, s, a)?;
        let v2 = self.video.cross_step(g, s, v1, a1)?;
        let a2 = self.audio.cross_step(g, s, a1, v1)?;
        Ok((v2, a2))
    }
}

pub fn fuse(g: &mut Graph, s: &ParamStore, blocks: &[FusionBlock], mut v: Var, mut a: Var) -> Result<(Var, Var)> {
    for b in blocks {
        (v, a) = b.forward(g, s, v, a)?;
    }
    Ok((v, a))
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub mask_token: ParamId,
    pub stack: EncoderStack,
    pub head: Linear,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, cfg: &BackboneConfig, patch_dim: usize) -> Result<Self> {
        let c = cfg.embed_dim;
        Ok(Self {
            mask_token: store.add(&format!("{name}.mask_token"), init.normal(&[1, c])),
            stack: EncoderStack::new(store, init, &format!("{name}.stack"), c, cfg.heads, cfg.decoder_depth)?,
            head: Linear::new(store, init, &format!("{name}.head"), c, patch_dim),
        })
    }

    /// Reconstructions at `plan.loss_positions`, one row each.
    ///
    /// The decoder sequence is the fused features at encoder-visible slots
    /// followed by the mask token plus the positional row at every
    /// decoder-masked slot.
    pub fn decode(&self, g: &mut Graph, s: &ParamStore, fused: Var, plan: &MaskPlan) -> Result<Var> {
        if plan.loss_positions.is_empty() {
            return Err(Error::DegeneratePlan);
        }
        let visible = g.value(fused).shape()[0];
        let masked = plan.decoder_mask_positions();
        let c = g.value(fused).shape()[1];
        let token = g.param(s, self.mask_token);
        let tokens = g.repeat_rows(token, masked.len())?;
        let pe = g.constant(positional_rows(&masked, c));
        let tokens = g.add(tokens, pe)?;
        let seq = g.concat_rows(&[fused, tokens])?;
        let out = self.stack.forward(g, s, seq)?;
        let rows: Vec<usize> = plan
            .loss_positions
            .iter()
            .map(|p| visible + masked.binary_search(p).expect("loss position is decoder-masked"))
            .collect();
        let picked = g.gather_rows(out, &rows)?;
        self.head.forward(g, s, picked)
    }
}

/// Everything trained during pre-training.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    pub video_encoder: ModalityEncoder,
    pub audio_encoder: ModalityEncoder,
    pub fusion: Vec<FusionBlock>,
    pub video_decoder: Decoder,
    pub audio_decoder: Decoder,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &BackboneConfig) -> Result<Self> {
        let c = cfg.embed_dim;
        Ok(Self {
            cfg: cfg.clone(),
            video_encoder: ModalityEncoder::new(store, init, "video_encoder", cfg.video_patch_dim, cfg, cfg.video_depth)?,
            audio_encoder: ModalityEncoder::new(store, init, "audio_encoder", cfg.audio_patch_dim, cfg, cfg.audio_depth)?,
            fusion: (0..cfg.fusion_depth)
                .map(|i| FusionBlock::new(store, init, &format!("fusion.{i}"), c, cfg.heads))
                .collect::<Result<Vec<_>>>()?,
            video_decoder: Decoder::new(store, init, "video_decoder", cfg, cfg.video_patch_dim)?,
            audio_decoder: Decoder::new(store, init, "audio_decoder", cfg, cfg.audio_patch_dim)?,
        })
    }

    /// Reconstructions `(video, audio)` at the loss positions of each plan.
    pub fn reconstruct(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        video_patches: &Tensor,
        audio_patches: &Tensor,
        video_plan: &MaskPlan,
        audio_plan: &MaskPlan,
    ) -> Result<(Var, Var)> {
        let vp = g.constant(video_patches.clone());
        let ap = g.constant(audio_patches.clone());
        let (v, _) = encode_visible(g, s, &self.video_encoder, vp, video_plan)?;
        let (a, _) = encode_visible(g, s, &self.audio_encoder, ap, audio_plan)?;
        let (v, a) = fuse(g, s, &self.fusion, v, a)?;
        let rv = self.video_decoder.decode(g, s, v, video_plan)?;
        let ra = self.audio_decoder.decode(g, s, a, audio_plan)?;
        Ok((rv, ra))
    }
}
