use hola_core::backbone::{Backbone, BackboneConfig};
use hola_core::frontend::{Grid, Modality};
use hola_core::gradcheck::grad_check_params;
use hola_core::masking::{build_dual_plan, MaskConfig};
use hola_core::optim::OptimConfig;
use hola_core::pretrain::*;
use hola_core::{Gradients, Graph, ParamStore, Rng, Tensor};

fn tiny_cfg() -> BackboneConfig {
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

fn rand_tensor(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(&[r, c], (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

fn sample(rng: &mut Rng) -> PretrainSample {
    PretrainSample {
        video_patches: rand_tensor(rng, 32, 6),
        audio_patches: rand_tensor(rng, 8, 4),
        video_targets: rand_tensor(rng, 32, 6),
        audio_targets: rand_tensor(rng, 8, 4),
        video_grid: Grid::Video { t: 2, h: 4, w: 4 },
        audio_grid: Grid::Audio { t: 8, f: 1 },
    }
}

#[test]
fn single_position_example() {
    let plan = build_dual_plan(Modality::Audio, vec![true, false], vec![true, false], 0.5, 0.5).unwrap();
    assert_eq!(plan.loss_positions, vec![0]);
    let mut g = Graph::new();
    let pred = g.constant(Tensor::from_rows(&[&[3.0, 4.0]]).unwrap());
    let target = g.constant(Tensor::zeros(&[1, 2]));
    let l = recon_loss(&mut g, pred, target, &plan, ReconNormalizer::Literal).unwrap();
    assert_eq!(g.value(l).data()[0], 25.0);
    let l = recon_loss(&mut g, pred, target, &plan, ReconNormalizer::MeanOverLossSet).unwrap();
    assert_eq!(g.value(l).data()[0], 25.0);
}

#[test]
fn loss_is_quadratic_nonnegative_and_zero_on_match() {
    let mut rng = Rng::new(3);
    let enc: Vec<bool> = (0..10).map(|i| i % 3 != 0).collect();
    let dec: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
    let plan = build_dual_plan(Modality::Video, enc, dec, 0.7, 0.5).unwrap();
    let k = plan.loss_positions.len();
    let p = rand_tensor(&mut rng, k, 3);
    let t = rand_tensor(&mut rng, k, 3);
    let mut g = Graph::new();
    let pv = g.constant(p.clone());
    let tv = g.constant(t.clone());
    let l1 = recon_loss(&mut g, pv, tv, &plan, ReconNormalizer::Literal).unwrap();
    let doubled: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| b + 2.0 * (a - b)).collect();
    let p2 = g.constant(Tensor::new(&[k, 3], doubled).unwrap());
    let l2 = recon_loss(&mut g, p2, tv, &plan, ReconNormalizer::Literal).unwrap();
    let (a, b) = (g.value(l1).data()[0], g.value(l2).data()[0]);
    assert!(a > 0.0);
    assert!((b - 4.0 * a).abs() < 1e-12 * b);
    let same = recon_loss(&mut g, tv, tv, &plan, ReconNormalizer::Literal).unwrap();
    assert_eq!(g.value(same).data()[0], 0.0);
}

#[test]
fn loss_rejects_wrong_row_count() {
    let plan = build_dual_plan(Modality::Audio, vec![true, true, false], vec![true, true, false], 0.5, 0.5).unwrap();
    let mut g = Graph::new();
    let p = g.constant(Tensor::zeros(&[1, 2]));
    assert!(recon_loss(&mut g, p, p, &plan, ReconNormalizer::Literal).is_err());
}

#[test]
fn total_loss_adds() {
    let mut g = Graph::new();
    for (a, b, want) in [(0.0, 0.0, 0.0), (1.5, 2.5, 4.0)] {
        let x = g.constant(Tensor::scalar(a));
        let y = g.constant(Tensor::scalar(b));
        let t = total_loss(&mut g, x, y).unwrap();
        assert_eq!(g.value(t).data()[0], want);
    }
}

fn loss_and_grads(model: &Backbone, s: &ParamStore, smp: &PretrainSample, seed: u64) -> hola_core::Result<(f64, Gradients)> {
    let (vp, ap) = draw_plans(&MaskConfig::default(), seed, 0, 0, smp)?;
    let mut g = Graph::new();
    let (parts, total) = sample_loss(&mut g, s, model, smp, &vp, &ap, ReconNormalizer::Literal)?;
    g.backward(total)?;
    Ok((parts.total(), Gradients::from_graph(&g, s)))
}

#[test]
fn composite_pretrain_loss_passes_grad_check() {
    let mut rng = Rng::new(4);
    let smp = sample(&mut rng);
    let (model, mut store) = init_backbone(&tiny_cfg(), 9).unwrap();
    // Larger weights make every path contribute measurably.
    for id in store.ids().collect::<Vec<_>>() {
        if store.entry(id).name.ends_with(".w") || store.entry(id).name.ends_with("mask_token") {
            for v in store.get_mut(id).data_mut() {
                *v *= 10.0;
            }
        }
    }
    let report = grad_check_params(|s| loss_and_grads(&model, s, &smp, 1), &store, 1e-5, 6).unwrap();
    for r in &report {
        assert!(r.max_rel_err < 1e-4, "{}: {}", r.name, r.max_rel_err);
    }
    assert!(report.iter().any(|r| r.name == "video_decoder.head.w"));
}

#[test]
fn shared_parameter_gradient_is_the_sum_of_both_losses() {
    let mut rng = Rng::new(5);
    let smp = sample(&mut rng);
    let (model, store) = init_backbone(&tiny_cfg(), 2).unwrap();
    let (vp, ap) = draw_plans(&MaskConfig::default(), 3, 0, 0, &smp).unwrap();
    let id = store.id("fusion.0.video.cross_attn.q.w").unwrap();
    let grad_of = |pick: usize| {
        let mut g = Graph::new();
        let (rv, ra) = model
            .reconstruct(&mut g, &store, &smp.video_patches, &smp.audio_patches, &vp, &ap)
            .unwrap();
        let tv = g.constant(gather(&smp.video_targets, &vp.loss_positions));
        let ta = g.constant(gather(&smp.audio_targets, &ap.loss_positions));
        let lv = recon_loss(&mut g, rv, tv, &vp, ReconNormalizer::Literal).unwrap();
        let la = recon_loss(&mut g, ra, ta, &ap, ReconNormalizer::Literal).unwrap();
        let out = match pick {
            0 => la,
            1 => lv,
            _ => total_loss(&mut g, la, lv).unwrap(),
        };
        g.backward(out).unwrap();
        g.param_grad(id).map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; store.get(id).len()])
    };
    let (a, v, t) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..t.len() {
        assert!((a[i] + v[i] - t[i]).abs() < 1e-12);
    }
}

fn gather(x: &Tensor, rows: &[usize]) -> Tensor {
    let c = x.shape()[1];
    Tensor::new(&[rows.len(), c], rows.iter().flat_map(|&r| x.row(r).to_vec()).collect()).unwrap()
}

fn run_cfg(lr: f64) -> PretrainConfig {
    PretrainConfig {
        backbone: tiny_cfg(),
        optim: OptimConfig {
            learning_rate: lr,
            epochs: 3,
            batch_size: 2,
            seed: 17,
            ..OptimConfig::default()
        },
        ..PretrainConfig::default()
    }
}

#[test]
fn zero_rate_leaves_parameters_bit_identical() {
    let mut rng = Rng::new(6);
    let data: Vec<_> = (0..4).map(|_| sample(&mut rng)).collect();
    let cfg = run_cfg(0.0);
    let (model, mut store) = init_backbone(&cfg.backbone, 1).unwrap();
    let before = store.clone();
    pretrain_run(&model, &mut store, &data, &cfg, |_| {}).unwrap();
    for id in store.ids() {
        assert_eq!(store.get(id), before.get(id));
    }
}

#[test]
fn runs_are_seed_deterministic() {
    let mut rng = Rng::new(7);
    let data: Vec<_> = (0..4).map(|_| sample(&mut rng)).collect();
    let cfg = run_cfg(1e-3);
    let run = || {
        let (model, mut store) = init_backbone(&cfg.backbone, 1).unwrap();
        let h = pretrain_run(&model, &mut store, &data, &cfg, |_| {}).unwrap();
        (h, store)
    };
    let (h1, s1) = run();
    let (h2, s2) = run();
    assert_eq!(h1, h2);
    assert_eq!(h1.steps.len(), 6);
    assert_eq!(h1.epoch_means.len(), 3);
    for id in s1.ids() {
        assert_eq!(s1.get(id), s2.get(id));
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let cfg = run_cfg(1e-3);
    let (model, mut store) = init_backbone(&cfg.backbone, 1).unwrap();
    assert!(pretrain_run(&model, &mut store, &[], &cfg, |_| {}).is_err());
}

#[test]
fn loss_parts_are_nonnegative_and_sum() {
    let mut rng = Rng::new(8);
    let smp = sample(&mut rng);
    let (model, store) = init_backbone(&tiny_cfg(), 4).unwrap();
    let (vp, ap) = draw_plans(&MaskConfig::default(), 0, 0, 0, &smp).unwrap();
    let mut g = Graph::new();
    let (parts, total) = sample_loss(&mut g, &store, &model, &smp, &vp, &ap, ReconNormalizer::Literal).unwrap();
    assert!(parts.l_a > 0.0 && parts.l_v > 0.0);
    assert_eq!(g.value(total).data()[0], parts.l_a + parts.l_v);
}
