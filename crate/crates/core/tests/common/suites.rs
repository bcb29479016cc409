//! Randomized comparisons of the graph ops against the loop oracles.
//! Each runner returns the worst absolute deviation over its instances.

use super::*;
use hola_core::head::{iterative_interact, Align, BnMode, Head, HeadConfig, InteractionLayer, LocalGlobal, Refiner};
use hola_core::nn::Attention;
use hola_core::params::Init;
use hola_core::{Graph, ParamStore, Rng, Tensor};

pub const INSTANCES: usize = 100;

pub fn tiny_head_cfg() -> HeadConfig {
    HeadConfig {
        embed_dim: 8,
        heads: 2,
        seq_len: 4,
        video_len: 16,
        audio_len: 4,
        rounds: 2,
        fusion_depth: 1,
        ..HeadConfig::default()
    }
}

pub fn tiny_head(rng: &mut Rng) -> (Head, ParamStore) {
    let mut store = ParamStore::new();
    let mut init = Init::new(rng.below(1 << 20) as u64, 0.02);
    let head = Head::new(&mut store, &mut init, &tiny_head_cfg()).unwrap();
    randomize(&mut store, rng, 0.4);
    (head, store)
}

pub fn attention_fixture(rng: &mut Rng, c: usize, heads: usize) -> (Attention, ParamStore) {
    let mut store = ParamStore::new();
    let mut init = Init::new(rng.below(1000) as u64, 0.02);
    let a = Attention::new(&mut store, &mut init, "attn", c, heads).unwrap();
    randomize(&mut store, rng, 0.5);
    (a, store)
}

pub fn align_oracle(s: &ParamStore, al: &Align, x: &Mat) -> Mat {
    let mut x = x.clone();
    for c in &al.convs {
        x = conv1d(&x, s.get(c.w), s.get(c.b).data(), c.stride, c.padding);
    }
    matmul(&to_mat(s.get(al.length_proj)), &x)
}

pub fn interaction_oracle(s: &ParamStore, l: &InteractionLayer, fc: &Mat, fo: &Mat) -> Mat {
    let a = attention(s, &l.cross, fc, fo);
    let h = map(&linear(s, &l.gate_hidden, &hcat(fc, &a)), |v| v.max(0.0));
    let gate = map(&linear(s, &l.gate_out, &h), sigmoid);
    let fu = add(fc, &hadamard(&gate, &sub(&a, fc)));
    layer_norm(s, &l.norm, &add(fc, &fu))
}

pub fn local_global_oracle(s: &ParamStore, lg: &LocalGlobal, v: &Mat, a: &Mat) -> Mat {
    let mut seq = to_mat(s.get(lg.cls_token));
    seq.extend(v.iter().cloned());
    seq.extend(a.iter().cloned());
    let out = encoder_stack(s, &lg.stack, &seq);
    let fl: Mat = out[1..].to_vec();
    let fg: Mat = (0..fl.len()).map(|_| out[0].clone()).collect();
    let gate = map(&linear(s, &lg.gate, &hcat(&fl, &fg)), sigmoid);
    hadamard(&fl, &gate)
}

pub fn refiner_oracle(s: &ParamStore, r: &Refiner, batch: &[Mat]) -> Mat {
    let mut seqs = batch.to_vec();
    let mut taps: Vec<Vec<f64>> = vec![Vec::new(); batch.len()];
    for st in &r.stages {
        let conv: Vec<Mat> = seqs
            .iter()
            .map(|x| conv1d(x, s.get(st.conv.w), s.get(st.conv.b).data(), 2, 1))
            .collect();
        let c = conv[0][0].len();
        let rows: Vec<&Vec<f64>> = conv.iter().flatten().collect();
        let n = rows.len() as f64;
        let (gamma, beta) = (s.get(st.gamma).data(), s.get(st.beta).data());
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for j in 0..c {
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            var[j] = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
        }
        seqs = conv
            .iter()
            .map(|x| {
                x.iter()
                    .map(|row| {
                        (0..c)
                            .map(|j| (gamma[j] * (row[j] - mean[j]) / (var[j] + r.bn_eps).sqrt() + beta[j]).max(0.0))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        for (t, x) in taps.iter_mut().zip(&seqs) {
            for j in 0..c {
                t.push(x.iter().map(|row| row[j]).sum::<f64>() / x.len() as f64);
            }
        }
    }
    let f = layer_norm(s, &r.norm, &linear(s, &r.aggregate, &taps));
    linear(s, &r.classifier, &f)
}

fn worst(seed: u64, mut one: impl FnMut(&mut Rng) -> f64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..INSTANCES).map(|_| one(&mut rng)).fold(0.0, f64::max)
}

pub fn attention_error(seed: u64) -> f64 {
    worst(seed, |rng| {
        let heads = [1, 2, 4][rng.below(3)];
        let c = heads * (1 + rng.below(3));
        let (a, s) = attention_fixture(rng, c, heads);
        let (lq, lk) = (1 + rng.below(6), 1 + rng.below(6));
        let xq = rand_mat(rng, lq, c);
        let xkv = rand_mat(rng, lk, c);
        let mut g = Graph::new();
        let q = g.constant(to_tensor(&xq));
        let kv = g.constant(to_tensor(&xkv));
        let out = a.mhca(&mut g, &s, q, kv).unwrap();
        max_diff(&attention(&s, &a, &xq, &xkv), g.value(out))
    })
}

pub fn conv1d_error(seed: u64) -> f64 {
    worst(seed, |rng| {
        let (cin, cout) = (1 + rng.below(5), 1 + rng.below(5));
        let k = 1 + rng.below(3);
        let stride = 1 + rng.below(2);
        let padding = rng.below(2);
        let l = k + rng.below(8);
        let x = rand_mat(rng, l, cin);
        let w = Tensor::new(&[k, cin, cout], (0..k * cin * cout).map(|_| rng.normal()).collect()).unwrap();
        let b: Vec<f64> = (0..cout).map(|_| rng.normal()).collect();
        let mut g = Graph::new();
        let xv = g.constant(to_tensor(&x));
        let wv = g.constant(w.clone());
        let bv = g.constant(Tensor::new(&[cout], b.clone()).unwrap());
        let out = g.conv1d(xv, wv, bv, stride, padding).unwrap();
        max_diff(&conv1d(&x, &w, &b, stride, padding), g.value(out))
    })
}

pub fn align_error(seed: u64) -> f64 {
    worst(seed, |rng| {
        let (head, s) = tiny_head(rng);
        let v = rand_mat(rng, 16, 8);
        let a = rand_mat(rng, 4, 8);
        let mut g = Graph::new();
        let vv = g.constant(to_tensor(&v));
        let av = g.constant(to_tensor(&a));
        let (ov, oa) = head.align(&mut g, &s, vv, av).unwrap();
        let pe = sinusoid(4, 8);
        let dv = max_diff(&add(&align_oracle(&s, &head.align_video, &v), &pe), g.value(ov));
        let da = max_diff(&add(&align_oracle(&s, &head.align_audio, &a), &pe), g.value(oa));
        dv.max(da)
    })
}

pub fn interaction_error(seed: u64) -> f64 {
    worst(seed, |rng| {
        let (head, s) = tiny_head(rng);
        let fc = rand_mat(rng, 4, 8);
        let fo = rand_mat(rng, 4, 8);
        let l = &head.video_layers[0];
        let mut g = Graph::new();
        let a = g.constant(to_tensor(&fc));
        let b = g.constant(to_tensor(&fo));
        let out = l.forward(&mut g, &s, a, b).unwrap();
        max_diff(&interaction_oracle(&s, l, &fc, &fo), g.value(out))
    })
}

pub fn iterative_interaction_error(seed: u64) -> f64 {
    worst(seed, |rng| {
        let (head, s) = tiny_head(rng);
        let mut v = rand_mat(rng, 4, 8);
        let mut a = rand_mat(rng, 4, 8);
        let mut g = Graph::new();
        let vv = g.constant(to_tensor(&v));
        let av = g.constant(to_tensor(&a));
        let (ov, oa) = iterative_interact(&mut g, &s, &head.video_layers, &head.audio_layers, vv, av).unwrap();
        for (lv, la) in head.video_layers.iter().zip(&head.audio_layers) {
            let nv = interaction_oracle(&s, lv, &v, &a);
            let na = interaction_oracle(&s, la, &a, &v);
            (v, a) = (nv, na);
        }
        max_diff(&v, g.value(ov)).max(max_diff(&a, g.value(oa)))
    })
}

pub fn local_global_error(seed: u64) -> f64 {
    worst(seed, |rng| {
        let (head, s) = tiny_head(rng);
        let v = rand_mat(rng, 4, 8);
        let a = rand_mat(rng, 4, 8);
        let mut g = Graph::new();
        let vv = g.constant(to_tensor(&v));
        let av = g.constant(to_tensor(&a));
        let out = head.local_global.forward(&mut g, &s, vv, av).unwrap();
        assert_eq!(g.value(out).shape(), &[8, 8]);
        max_diff(&local_global_oracle(&s, &head.local_global, &v, &a), g.value(out))
    })
}

pub fn refiner_error(seed: u64) -> f64 {
    worst(seed, |rng| {
        let (head, s) = tiny_head(rng);
        let b = 1 + rng.below(4);
        let batch: Vec<Mat> = (0..b).map(|_| rand_mat(rng, 8, 8)).collect();
        let mut g = Graph::new();
        let vars: Vec<_> = batch.iter().map(|m| g.constant(to_tensor(m))).collect();
        let out = head.refiner.forward(&mut g, &s, &vars, BnMode::Train).unwrap();
        assert_eq!(g.value(out.logits).shape(), &[b, 2]);
        max_diff(&refiner_oracle(&s, &head.refiner, &batch), g.value(out.logits))
    })
}
