mod common;

use common::suites::*;
use common::*;
use hola_core::head::{pooling_matrix, Align, BnMode};
use hola_core::params::Init;
use hola_core::{Graph, ParamStore, Rng, Tensor};

#[test]
fn align_matches_oracle() {
    assert!(align_error(1) < 1e-10);
}

#[test]
fn align_uses_strided_chain_only_when_longer() {
    let mut store = ParamStore::new();
    let mut init = Init::new(0, 0.02);
    let long = Align::new(&mut store, &mut init, "l", 8, 128, 16).unwrap();
    assert_eq!(long.convs.iter().map(|c| c.stride).collect::<Vec<_>>(), vec![2, 2, 2]);
    assert_eq!(store.get(long.length_proj).shape(), &[16, 16]);
    let short = Align::new(&mut store, &mut init, "s", 8, 16, 16).unwrap();
    assert_eq!(short.convs.len(), 1);
    assert_eq!(short.convs[0].stride, 1);
    let up = Align::new(&mut store, &mut init, "u", 8, 10, 16).unwrap();
    assert_eq!(store.get(up.length_proj).shape(), &[16, 10]);
}

#[test]
fn square_pooling_matrix_is_identity_and_rows_average() {
    assert_eq!(pooling_matrix(5, 5), Tensor::eye(5));
    let p = pooling_matrix(4, 12);
    for r in 0..4 {
        let row = &p.data()[r * 12..(r + 1) * 12];
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), 3);
    }
}

#[test]
fn interaction_layer_matches_oracle() {
    assert!(interaction_error(2) < 1e-10);
}

#[test]
fn closed_gate_reduces_to_doubled_residual() {
    let mut rng = Rng::new(3);
    let (head, mut s) = tiny_head(&mut rng);
    let l = &head.audio_layers[1];
    s.get_mut(l.gate_out.w).data_mut().fill(0.0);
    s.get_mut(l.gate_out.b).data_mut().fill(-1e4);
    let fc = rand_mat(&mut rng, 4, 8);
    let fo = rand_mat(&mut rng, 4, 8);
    let mut g = Graph::new();
    let a = g.constant(to_tensor(&fc));
    let b = g.constant(to_tensor(&fo));
    let out = l.forward(&mut g, &s, a, b).unwrap();
    let want = layer_norm(&s, &l.norm, &add(&fc, &fc));
    assert!(max_diff(&want, g.value(out)) < 1e-10);
}

#[test]
fn zero_gate_weights_give_half_gate() {
    let mut rng = Rng::new(4);
    let (head, mut s) = tiny_head(&mut rng);
    let l = &head.video_layers[0];
    s.get_mut(l.gate_out.w).data_mut().fill(0.0);
    s.get_mut(l.gate_out.b).data_mut().fill(0.0);
    let mut g = Graph::new();
    let fc = g.constant(to_tensor(&rand_mat(&mut rng, 4, 8)));
    let a = g.constant(to_tensor(&rand_mat(&mut rng, 4, 8)));
    let gate = l.gate(&mut g, &s, fc, a).unwrap();
    assert!(g.value(gate).data().iter().all(|&v| v == 0.5));
}

#[test]
fn iterative_interaction_matches_oracle() {
    assert!(iterative_interaction_error(5) < 1e-10);
}

#[test]
fn local_global_matches_oracle() {
    assert!(local_global_error(6) < 1e-10);
}

#[test]
fn local_global_rejects_unequal_lengths() {
    let mut rng = Rng::new(7);
    let (head, s) = tiny_head(&mut rng);
    let mut g = Graph::new();
    let v = g.constant(to_tensor(&rand_mat(&mut rng, 4, 8)));
    let a = g.constant(to_tensor(&rand_mat(&mut rng, 3, 8)));
    assert!(head.local_global.forward(&mut g, &s, v, a).is_err());
}

#[test]
fn refiner_matches_oracle() {
    assert!(refiner_error(8) < 1e-10);
}

#[test]
fn constant_batch_collapses_to_bias_path() {
    let mut rng = Rng::new(9);
    let (head, s) = tiny_head(&mut rng);
    let row: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
    let x: Mat = (0..8).map(|_| row.clone()).collect();
    let mut g = Graph::new();
    let xv = g.constant(to_tensor(&x));
    let out = head.refiner.forward(&mut g, &s, &[xv, xv], BnMode::Train).unwrap();
    let logits = g.value(out.logits);
    assert_eq!(logits.row(0), logits.row(1));
    assert!(logits.is_finite());
}

#[test]
fn running_statistics_follow_momentum() {
    let mut rng = Rng::new(10);
    let (head, mut s) = tiny_head(&mut rng);
    let batch: Vec<Mat> = (0..3).map(|_| rand_mat(&mut rng, 8, 8)).collect();
    let mut g = Graph::new();
    let vars: Vec<_> = batch.iter().map(|m| g.constant(to_tensor(m))).collect();
    let out = head.refiner.forward(&mut g, &s, &vars, BnMode::Train).unwrap();
    let st = &head.refiner.stages[0];
    let (m0, v0) = (s.get(st.running_mean).data().to_vec(), s.get(st.running_var).data().to_vec());
    head.refiner.update_running(&mut s, &out.stats, 0.1);
    for j in 0..8 {
        let want_m = 0.9 * m0[j] + 0.1 * out.stats[0].mean[j];
        let want_v = 0.9 * v0[j] + 0.1 * out.stats[0].var[j];
        assert!((s.get(st.running_mean).data()[j] - want_m).abs() < 1e-15);
        assert!((s.get(st.running_var).data()[j] - want_v).abs() < 1e-15);
    }
}

#[test]
fn eval_mode_is_per_sample() {
    let mut rng = Rng::new(11);
    let (head, s) = tiny_head(&mut rng);
    let x = rand_mat(&mut rng, 8, 8);
    let y = rand_mat(&mut rng, 8, 8);
    let mut g = Graph::new();
    let xv = g.constant(to_tensor(&x));
    let yv = g.constant(to_tensor(&y));
    let both = head.refiner.forward(&mut g, &s, &[xv, yv], BnMode::Eval).unwrap();
    let alone = head.refiner.forward(&mut g, &s, &[xv], BnMode::Eval).unwrap();
    let d: f64 = g
        .value(both.logits)
        .row(0)
        .iter()
        .zip(g.value(alone.logits).row(0))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(d < 1e-12);
}

#[test]
fn full_head_produces_finite_logits() {
    let mut rng = Rng::new(12);
    let (head, s) = tiny_head(&mut rng);
    let mut g = Graph::new();
    let batch: Vec<_> = (0..3)
        .map(|_| {
            let v = g.constant(to_tensor(&rand_mat(&mut rng, 16, 8)));
            let a = g.constant(to_tensor(&rand_mat(&mut rng, 4, 8)));
            (v, a)
        })
        .collect();
    let out = head.forward(&mut g, &s, &batch, BnMode::Train).unwrap();
    assert_eq!(g.value(out.logits).shape(), &[3, 2]);
    assert!(g.value(out.logits).is_finite());
    assert_eq!(out.stats.len(), 3);
}
