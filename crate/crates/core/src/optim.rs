//! AdamW with a warmed-up cosine schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup_frac: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.5e-4,
            weight_decay: 2e-2,
            warmup_frac: 0.05,
            epochs: 1,
            batch_size: 8,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Learning rate at `step` of `total`: linear warmup to `peak`, then cosine decay to zero.
pub fn cosine_lr(step: usize, total: usize, peak: f64, warmup_frac: f64) -> f64 {
    let warmup = libm::ceil(warmup_frac * total as f64) as usize;
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = (step - warmup) as f64 / span as f64;
    0.5 * peak * (1.0 + libm::cos(core::f64::consts::PI * progress.min(1.0)))
}

/// Adam moments with decoupled weight decay. Decay applies to tensors of rank ≥ 2
/// (projection matrices), not to biases, norm gains or tokens stored as vectors.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &OptimConfig) -> Self {
        let zeros = || store.entries().iter().map(|e| alloc::vec![0.0; e.value.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let entry = store.entry(id);
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let decay = if entry.value.rank() >= 2 { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (libm::sqrt(vhat) + self.eps) + decay * p[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_endpoints() {
        let total = 300;
        let w = libm::ceil(0.05 * total as f64) as usize;
        assert_eq!(cosine_lr(w, total, 1.0, 0.05), 1.0);
        assert!(cosine_lr(total - 1, total, 1.0, 0.05) <= 1e-2);
        assert!(cosine_lr(0, total, 1.0, 0.05) < 1.0);
        assert_eq!(cosine_lr(0, 10, 2.0, 0.0), 2.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::new(&[2], alloc::vec![1.0, -1.0]).unwrap());
        let cfg = OptimConfig::default();
        let mut opt = AdamW::new(&s, &cfg);
        let mut graph = crate::graph::Graph::new();
        let x = graph.param(&s, id);
        let y = graph.sum_squares(x).unwrap();
        graph.backward(y).unwrap();
        let g = Gradients::from_graph(&graph, &s);
        opt.step(&mut s, &g, 0.1);
        let p = s.get(id).data();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}
