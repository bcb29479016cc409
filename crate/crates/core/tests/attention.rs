mod common;

use common::suites::*;
use common::*;
use hola_core::backbone::{fuse, Backbone, BackboneConfig, FusionBlock};
use hola_core::frontend::Grid;
use hola_core::masking::MaskConfig;
use hola_core::nn::{Attention, EncoderStack};
use hola_core::params::Init;
use hola_core::{Graph, ParamStore, Rng, Tensor};

#[test]
fn attention_matches_loop_oracle() {
    assert!(attention_error(101) < 1e-9);
}

#[test]
fn single_token_self_attention_is_value_projection() {
    let mut rng = Rng::new(5);
    let (a, s) = attention_fixture(&mut rng, 8, 2);
    let x = rand_mat(&mut rng, 1, 8);
    let mut g = Graph::new();
    let xv = g.constant(to_tensor(&x));
    let out = a.mhsa(&mut g, &s, xv).unwrap();
    let want = linear(&s, &a.o, &linear(&s, &a.v, &x));
    assert!(max_diff(&want, g.value(out)) < 1e-12);
}

#[test]
fn identical_keys_give_the_same_output_for_every_query() {
    let mut rng = Rng::new(6);
    let (a, s) = attention_fixture(&mut rng, 8, 4);
    let key = rand_mat(&mut rng, 1, 8);
    let xkv: Mat = (0..5).map(|_| key[0].clone()).collect();
    let xq = rand_mat(&mut rng, 3, 8);
    let mut g = Graph::new();
    let q = g.constant(to_tensor(&xq));
    let kv = g.constant(to_tensor(&xkv));
    let out = a.mhca(&mut g, &s, q, kv).unwrap();
    let row = linear(&s, &a.o, &linear(&s, &a.v, &key));
    let want: Mat = (0..3).map(|_| row[0].clone()).collect();
    assert!(max_diff(&want, g.value(out)) < 1e-12);
}

#[test]
fn attention_is_invariant_to_key_order_and_equivariant_in_queries() {
    let mut rng = Rng::new(7);
    let (a, s) = attention_fixture(&mut rng, 8, 2);
    let xq = rand_mat(&mut rng, 4, 8);
    let xkv = rand_mat(&mut rng, 5, 8);
    let run = |xq: &Mat, xkv: &Mat| {
        let mut g = Graph::new();
        let q = g.constant(to_tensor(xq));
        let kv = g.constant(to_tensor(xkv));
        let out = a.mhca(&mut g, &s, q, kv).unwrap();
        to_mat(g.value(out))
    };
    let base = run(&xq, &xkv);
    let kperm: Mat = [4, 2, 0, 3, 1].iter().map(|&i| xkv[i].clone()).collect();
    assert!(max_diff(&base, &to_tensor(&run(&xq, &kperm))) < 1e-12);
    let order = [2, 0, 3, 1];
    let qperm: Mat = order.iter().map(|&i| xq[i].clone()).collect();
    let permuted: Mat = order.iter().map(|&i| base[i].clone()).collect();
    assert!(max_diff(&permuted, &to_tensor(&run(&qperm, &xkv))) < 1e-12);
}

#[test]
fn bad_head_count_is_rejected() {
    let mut store = ParamStore::new();
    let mut init = Init::new(0, 0.02);
    assert!(Attention::new(&mut store, &mut init, "a", 6, 4).is_err());
    assert!(Attention::new(&mut store, &mut init, "b", 6, 0).is_err());
}

#[test]
fn encoder_stack_matches_loop_oracle() {
    let mut rng = Rng::new(11);
    for _ in 0..20 {
        let mut store = ParamStore::new();
        let mut init = Init::new(rng.below(1000) as u64, 0.02);
        let depth = 1 + rng.below(3);
        let st = EncoderStack::new(&mut store, &mut init, "s", 8, 2, depth).unwrap();
        randomize(&mut store, &mut rng, 0.3);
        let rows = 1 + rng.below(6);
        let x = rand_mat(&mut rng, rows, 8);
        let mut g = Graph::new();
        let xv = g.constant(to_tensor(&x));
        let out = st.forward(&mut g, &store, xv).unwrap();
        assert!(max_diff(&encoder_stack(&store, &st, &x), g.value(out)) < 1e-9);
    }
}

#[test]
fn conv1d_matches_loop_oracle() {
    assert!(conv1d_error(13) < 1e-9);
}

fn tiny_backbone(seed: u64) -> (Backbone, ParamStore) {
    let cfg = BackboneConfig {
        embed_dim: 8,
        heads: 2,
        video_depth: 1,
        audio_depth: 1,
        fusion_depth: 2,
        decoder_depth: 1,
        video_patch_dim: 6,
        audio_patch_dim: 4,
        init_std: 0.02,
    };
    hola_core::pretrain::init_backbone(&cfg, seed).unwrap()
}

#[test]
fn fusion_keeps_shapes_for_unequal_lengths() {
    let (bb, s) = tiny_backbone(1);
    let mut rng = Rng::new(2);
    let mut g = Graph::new();
    let v = g.constant(to_tensor(&rand_mat(&mut rng, 7, 8)));
    let a = g.constant(to_tensor(&rand_mat(&mut rng, 3, 8)));
    let (fv, fa) = fuse(&mut g, &s, &bb.fusion, v, a).unwrap();
    assert_eq!(g.value(fv).shape(), &[7, 8]);
    assert_eq!(g.value(fa).shape(), &[3, 8]);
}

#[test]
fn zeroed_cross_attention_decouples_the_modalities() {
    let (bb, mut s) = tiny_backbone(3);
    let names: Vec<String> = s
        .entries()
        .iter()
        .filter(|e| e.name.contains("cross_attn.o."))
        .map(|e| e.name.clone())
        .collect();
    for n in names {
        let shape = s.get(s.id(&n).unwrap()).shape().to_vec();
        s.set(&n, Tensor::zeros(&shape)).unwrap();
    }
    let mut rng = Rng::new(4);
    let v = rand_mat(&mut rng, 5, 8);
    let a1 = rand_mat(&mut rng, 3, 8);
    let a2 = rand_mat(&mut rng, 3, 8);
    let video_out = |a: &Mat| {
        let mut g = Graph::new();
        let vv = g.constant(to_tensor(&v));
        let av = g.constant(to_tensor(a));
        let (fv, _) = fuse(&mut g, &s, &bb.fusion, vv, av).unwrap();
        g.value(fv).clone()
    };
    assert_eq!(video_out(&a1), video_out(&a2));
}

#[test]
fn fusion_block_is_symmetric_under_swapped_weights() {
    let mut store = ParamStore::new();
    let mut init = Init::new(9, 0.3);
    let block = FusionBlock::new(&mut store, &mut init, "f", 8, 2).unwrap();
    let swapped = FusionBlock {
        video: block.audio.clone(),
        audio: block.video.clone(),
    };
    let mut rng = Rng::new(10);
    let x = rand_mat(&mut rng, 4, 8);
    let y = rand_mat(&mut rng, 6, 8);
    let mut g = Graph::new();
    let xv = g.constant(to_tensor(&x));
    let yv = g.constant(to_tensor(&y));
    let (v1, a1) = block.forward(&mut g, &store, xv, yv).unwrap();
    let (v2, a2) = swapped.forward(&mut g, &store, yv, xv).unwrap();
    assert_eq!(g.value(v1), g.value(a2));
    assert_eq!(g.value(a1), g.value(v2));
}

#[test]
fn decoder_emits_one_row_per_loss_position() {
    let (bb, s) = tiny_backbone(5);
    let masks = MaskConfig::default();
    let mut rng = Rng::new(6);
    let vgrid = Grid::Video { t: 2, h: 4, w: 4 };
    let agrid = Grid::Audio { t: 8, f: 1 };
    for _ in 0..10 {
        let vp = masks.video_plan(vgrid, &mut rng).unwrap();
        let ap = masks.audio_plan(agrid, &mut rng).unwrap();
        let video = to_tensor(&rand_mat(&mut rng, 32, 6));
        let audio = to_tensor(&rand_mat(&mut rng, 8, 4));
        let mut g = Graph::new();
        let (rv, ra) = bb.reconstruct(&mut g, &s, &video, &audio, &vp, &ap).unwrap();
        assert_eq!(g.value(rv).shape(), &[vp.loss_positions.len(), 6]);
        assert_eq!(g.value(ra).shape(), &[ap.loss_positions.len(), 4]);
    }
}

#[test]
fn zero_decoder_head_reconstructs_zeros() {
    let (bb, mut s) = tiny_backbone(7);
    for n in ["video_decoder.head.w", "video_decoder.head.b"] {
        let shape = s.get(s.id(n).unwrap()).shape().to_vec();
        s.set(n, Tensor::zeros(&shape)).unwrap();
    }
    let masks = MaskConfig::default();
    let mut rng = Rng::new(8);
    let vp = masks.video_plan(Grid::Video { t: 2, h: 4, w: 4 }, &mut rng).unwrap();
    let ap = masks.audio_plan(Grid::Audio { t: 8, f: 1 }, &mut rng).unwrap();
    let video = to_tensor(&rand_mat(&mut rng, 32, 6));
    let audio = to_tensor(&rand_mat(&mut rng, 8, 4));
    let mut g = Graph::new();
    let (rv, _) = bb.reconstruct(&mut g, &s, &video, &audio, &vp, &ap).unwrap();
    assert!(g.value(rv).data().iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_rows_follow_their_positions() {
    let (bb, s) = tiny_backbone(9);
    let mut rng = Rng::new(10);
    let patches = to_tensor(&rand_mat(&mut rng, 6, 6));
    let run = |pos: &[usize]| {
        let mut g = Graph::new();
        let p = g.constant(patches.clone());
        let out = bb.video_encoder.encode_positions(&mut g, &s, p, pos).unwrap();
        to_mat(g.value(out))
    };
    let a = run(&[0, 2, 5]);
    let b = run(&[5, 0, 2]);
    let reordered: Mat = [1, 2, 0].iter().map(|&i| b[i].clone()).collect();
    assert!(max_diff(&a, &to_tensor(&reordered)) < 1e-12);
}
