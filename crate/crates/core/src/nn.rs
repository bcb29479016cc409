//! Parameterised layers shared by the backbone and the head.
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParamStore`] and are
//! pulled into a [`Graph`] on every forward pass.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// `x W + b` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, din: usize, dout: usize) -> Self {
        let std = init.std;
        Self::with_std(store, init, name, din, dout, std)
    }

    pub fn with_std(store: &mut ParamStore, init: &mut Init, name: &str, din: usize, dout: usize, std: f64) -> Self {
        Self {
            w: store.add(&format!("{name}.w"), init.normal_with(&[din, dout], std)),
            b: store.add(&format!("{name}.b"), Tensor::zeros(&[dout])),
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[c])),
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(s, self.gamma);
        let beta = g.param(s, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Multi-head attention with `H · d_k == C`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl Attention {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide width {c}")));
        }
        Ok(Self {
            heads,
            q: Linear::new(store, init, &format!("{name}.q"), c, c),
            k: Linear::new(store, init, &format!("{name}.k"), c, c),
            v: Linear::new(store, init, &format!("{name}.v"), c, c),
            o: Linear::new(store, init, &format!("{name}.o"), c, c),
        })
    }

    /// Queries from `xq`, keys and values from `xkv`.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, xq: Var, xkv: Var) -> Result<Var> {
        let q = self.q.forward(g, s, xq)?;
        let k = self.k.forward(g, s, xkv)?;
        let v = self.v.forward(g, s, xkv)?;
        let c = g.value(q).shape()[1];
        let dk = c / self.heads;
        let scale = 1.0 / libm::sqrt(dk as f64);
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax_rows(scores)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        self.o.forward(g, s, cat)
    }

    /// Self-attention.
    pub fn mhsa(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        self.forward(g, s, x, x)
    }

    /// Cross-attention: `current` queries `other`.
    pub fn mhca(&self, g: &mut Graph, s: &ParamStore, current: Var, other: Var) -> Result<Var> {
        self.forward(g, s, current, other)
    }
}

/// `C → 4C → C` with GELU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), c, hidden),
            fc2: Linear::new(store, init, &format!("{name}.fc2"), hidden, c),
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, s, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, s, h)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), c),
            attn: Attention::new(store, init, &format!("{name}.attn"), c, heads)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), c),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), c, 4 * c),
        })
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, s, x)?;
        let h = self.attn.mhsa(g, s, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, s, x)?;
        let h = self.ffn.forward(g, s, h)?;
        g.add(x, h)
    }
}

/// `depth` blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
}

impl EncoderStack {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config(format!("{name}: depth must be at least 1")));
        }
        let blocks = (0..depth)
            .map(|i| EncoderBlock::new(store, init, &format!("{name}.blocks.{i}"), c, heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), c),
        })
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(g, s, x)?;
        }
        self.norm.forward(g, s, x)
    }
}
