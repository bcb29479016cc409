//! Plain-loop reference implementations used as test oracles.

#![allow(dead_code)]

pub mod suites;

use hola_core::nn::{Attention, EncoderStack, FeedForward, LayerNorm, Linear};
use hola_core::{ParamId, ParamStore, Rng, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    let c = m[0].len();
    Tensor::new(&[m.len(), c], m.iter().flatten().copied().collect()).unwrap()
}

pub fn rand_mat(rng: &mut Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.normal()).collect()).collect()
}

pub fn max_diff(a: &Mat, b: &Tensor) -> f64 {
    let b = to_mat(b);
    assert_eq!(a.len(), b.len(), "row count");
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.len(), y.len(), "column count");
        for (u, v) in x.iter().zip(y) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

/// Overwrites every trainable tensor with N(0, std²) entries.
pub fn randomize(store: &mut ParamStore, rng: &mut Rng, std: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if !store.entry(id).trainable {
            continue;
        }
        for v in store.get_mut(id).data_mut() {
            *v = std * rng.normal();
        }
    }
}

fn p(s: &ParamStore, id: ParamId) -> &[f64] {
    s.get(id).data()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            let mut acc = 0.0;
            for k in 0..b.len() {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

pub fn sub(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect()
}

pub fn hadamard(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).collect()).collect()
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

pub fn hcat(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect()
}

pub fn linear(s: &ParamStore, l: &Linear, x: &Mat) -> Mat {
    let w = s.get(l.w);
    let (din, dout) = w.dims2().unwrap();
    let b = p(s, l.b);
    x.iter()
        .map(|row| {
            (0..dout)
                .map(|j| b[j] + (0..din).map(|k| row[k] * w.get2(k, j)).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn layer_norm(s: &ParamStore, ln: &LayerNorm, x: &Mat) -> Mat {
    let (g, b) = (p(s, ln.gamma), p(s, ln.beta));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| g[j] * (v - mean) / (var + 1e-5).sqrt() + b[j])
                .collect()
        })
        .collect()
}

pub fn attention(s: &ParamStore, a: &Attention, xq: &Mat, xkv: &Mat) -> Mat {
    let q = linear(s, &a.q, xq);
    let k = linear(s, &a.k, xkv);
    let v = linear(s, &a.v, xkv);
    let c = q[0].len();
    let dk = c / a.heads;
    let mut cat = vec![vec![0.0; c]; q.len()];
    for h in 0..a.heads {
        for i in 0..q.len() {
            let mut scores = Vec::new();
            for krow in &k {
                let dot: f64 = (0..dk).map(|d| q[i][h * dk + d] * krow[h * dk + d]).sum();
                scores.push(dot / (dk as f64).sqrt());
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..dk {
                cat[i][h * dk + d] = e.iter().zip(&v).map(|(w, vr)| w / z * vr[h * dk + d]).sum();
            }
        }
    }
    linear(s, &a.o, &cat)
}

pub fn ffn(s: &ParamStore, f: &FeedForward, x: &Mat) -> Mat {
    let h = map(&linear(s, &f.fc1, x), gelu);
    linear(s, &f.fc2, &h)
}

pub fn encoder_stack(s: &ParamStore, st: &EncoderStack, x: &Mat) -> Mat {
    let mut x = x.clone();
    for b in &st.blocks {
        let h = layer_norm(s, &b.ln1, &x);
        x = add(&x, &attention(s, &b.attn, &h, &h));
        let h = layer_norm(s, &b.ln2, &x);
        x = add(&x, &ffn(s, &b.ffn, &h));
    }
    layer_norm(s, &st.norm, &x)
}

/// Zero-padded 1-D convolution; `w` is `k × C_in × C_out`.
pub fn conv1d(x: &Mat, w: &Tensor, b: &[f64], stride: usize, padding: usize) -> Mat {
    let (k, cin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let l = x.len();
    let lout = (l + 2 * padding - k) / stride + 1;
    let mut out = vec![b.to_vec(); lout];
    for (o, orow) in out.iter_mut().enumerate() {
        for kk in 0..k {
            let pos = (o * stride + kk) as isize - padding as isize;
            if pos < 0 || pos >= l as isize {
                continue;
            }
            for i in 0..cin {
                for (j, acc) in orow.iter_mut().enumerate().take(cout) {
                    *acc += x[pos as usize][i] * w.data()[(kk * cin + i) * cout + j];
                }
            }
        }
    }
    out
}

pub fn sinusoid(len: usize, c: usize) -> Mat {
    (0..len)
        .map(|pos| {
            (0..c)
                .map(|d| {
                    let angle = pos as f64 / 10_000f64.powf((d / 2 * 2) as f64 / c as f64);
                    if d % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}
