use foley_core::ckpt::Checkpoint;
use foley_core::gradcheck::{check_inputs, check_params, DEFAULT_EPS};
use foley_core::nn::ParamStore;
use foley_core::{Error, Graph, Graph64, ParamStore64, SeededRng, Tensor};
use foley_dsp::{Event, EventClass, EventTrack};
use foley_flow::conditioning::{nearest_indices, ModalityInput};
use foley_flow::flow::noise;
use foley_flow::mmdit::BlockContext;
use foley_flow::*;
use proptest::prelude::*;

fn toy_config() -> ModelConfig {
    ModelConfig {
        depth_joint: 1,
        depth_single: 1,
        heads: 1,
        d_latent: 3,
        max_audio_len: 64,
        max_vision_len: 16,
        max_text_len: 8,
        ..ModelConfig::default()
    }
}

fn toy_model(seed: u64) -> (FlowModel, ParamStore64) {
    let mut ps = ParamStore::new();
    let m = FlowModel::new(toy_config(), &mut ps, &mut SeededRng::new(seed)).unwrap();
    (m, ps)
}

/// Replaces every parameter whose name contains `pat` with N(0, scale²) values.
fn randomize(ps: &mut ParamStore64, pat: &str, scale: f64, rng: &mut SeededRng) {
    let ids: Vec<_> = ps.ids().filter(|&id| ps.name(id).contains(pat)).collect();
    for id in ids {
        let t = Tensor::<f64>::randn(ps.value(id).shape(), rng).map(|v| v * scale);
        ps.set(id, t).unwrap();
    }
}

fn track(class: EventClass, onset: f64) -> EventTrack {
    EventTrack { events: vec![Event { onset_s: onset, offset_s: onset + 0.4, class }] }
}

fn bundle(class: EventClass, caption: &str) -> ConditionBundle {
    ConditionBundle::from_event_track(&track(class, 0.2), caption, &Vocab::synthetic(), 1.0, &toy_config()).unwrap()
}

fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::randn(shape, rng)
}

// ---- rotary positions

#[test]
fn rope_position_zero_is_identity() {
    let a = rope_angles(&[0.0], 43.0 / 8.0, 64, 10_000.0).unwrap();
    assert!(a.data().iter().all(|&v| v == 0.0));
    let mut rng = SeededRng::new(1);
    let mut g = Graph64::new();
    let x = g.constant(randn(&[2, 1, 64], &mut rng));
    let y = aligned_rope_apply(&mut g, x, 5.0, 10_000.0).unwrap();
    assert_eq!(g.value(x), g.value(y));
}

#[test]
fn rope_aligns_vision_and_audio_at_equal_wall_clock() {
    let cfg = RopeConfig { audio_rate: 43.0, vision_rate: 8.0, ..RopeConfig::default() };
    let vis: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let aud: Vec<f64> = (0..220).map(|i| i as f64).collect();
    let av = rope_angles(&vis, cfg.rate_scale(cfg.vision_rate), 64, cfg.base).unwrap();
    let aa = rope_angles(&aud, 1.0, 64, cfg.base).unwrap();
    let mut pairs = 0;
    for i in 0..40 {
        for j in 0..220 {
            // i/8 == j/43
            if i * 43 == j * 8 {
                pairs += 1;
                for k in 0..32 {
                    assert!((av.at2(i, k) - aa.at2(j, k)).abs() < 1e-9);
                }
            }
        }
    }
    assert_eq!(pairs, 5);
}

#[test]
fn rope_rejects_nonpositive_rate_scale() {
    assert!(matches!(rope_angles(&[1.0], 0.0, 64, 10_000.0), Err(Error::Input(_))));
    assert!(matches!(rope_angles(&[1.0], -2.0, 64, 10_000.0), Err(Error::Input(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rope_preserves_norm(seed in 0u64..1000, t in 1usize..12, scale in 0.1f64..20.0) {
        let mut rng = SeededRng::new(seed);
        let mut g = Graph64::new();
        let x = g.constant(randn(&[2, t, 64], &mut rng));
        let y = aligned_rope_apply(&mut g, x, scale, 10_000.0).unwrap();
        for p in 0..2 * t {
            let n0: f64 = g.value(x).data()[p * 64..(p + 1) * 64].iter().map(|v| v * v).sum();
            let n1: f64 = g.value(y).data()[p * 64..(p + 1) * 64].iter().map(|v| v * v).sum();
            prop_assert!((n0.sqrt() - n1.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn upsampling_indices_are_nondecreasing(src in 1usize..50, extra in 0usize..100) {
        let idx = nearest_indices(src, src + extra);
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(idx[0], 0);
        prop_assert!(*idx.last().unwrap() < src);
    }
}

// ---- scaling and schedules

#[test]
fn scaling_dims_matches_width_rule() {
    assert_eq!(scaling_dims(17.0 / 23.0, 23).unwrap(), (17, 1088));
    for (h, d) in [(17, 23), (23, 27), (32, 27)] {
        let (heads, hidden) = scaling_dims(h as f64 / d as f64, d).unwrap();
        assert_eq!((heads, hidden), (h, 64 * h));
    }
}

#[test]
fn small_head_ratio_is_warned_not_rejected() {
    let c = ModelConfig::scaled(17.0 / 23.0, 12, 11).unwrap();
    assert_eq!(c.heads, 17);
    c.validate().unwrap();
    assert_eq!(c.warnings().len(), 1);
}

#[test]
fn inverse_lr_hand_values() {
    let s = LrSchedule { lr_base: 1e-4, lr_final: 1e-6, gamma_inv: 1e4, power: 0.5, warm: 0.99 };
    assert!((inverse_lr(0, &s) - 1e-6).abs() <= 1e-12 * 1e-6);
    let w = |t: f64| 1.0 - 0.99f64.powf(t + 1.0);
    let at_gamma = 1e-4 * 2f64.powf(-0.5) * w(1e4);
    assert!((inverse_lr(10_000, &s) - at_gamma).abs() <= 1e-12 * at_gamma);
    let at_ten = 1e-4 * 11f64.powf(-0.5) * w(1e5);
    assert!((inverse_lr(100_000, &s) - at_ten).abs() <= 1e-12 * at_ten);
}

#[test]
fn inverse_lr_without_warmup_is_pure_decay_and_floors() {
    let s = LrSchedule { lr_base: 1e-3, lr_final: 1e-5, gamma_inv: 10.0, power: 1.0, warm: 0.0 };
    for t in [0u64, 5, 50] {
        let want = (1e-3 / (1.0 + t as f64 / 10.0)).max(1e-5);
        assert!((inverse_lr(t, &s) - want).abs() < 1e-18);
    }
    assert_eq!(inverse_lr(10_000_000, &s), 1e-5);
}

#[test]
fn inverse_lr_is_positive_bounded_and_eventually_nonincreasing() {
    let s = LrSchedule::default();
    // past t*, where the warmup factor exceeds 1 - 1e-3, the schedule only decays
    let t_star = ((1e-3f64).ln() / s.warm.ln()).ceil() as u64;
    let mut prev = inverse_lr(0, &s);
    for t in 1..40_000u64 {
        let v = inverse_lr(t, &s);
        assert!(v > 0.0 && v <= s.lr_base);
        if t > t_star {
            assert!(v <= prev, "increase at {t}");
        }
        prev = v;
    }
    // continuity on a dense real grid: steps of 1e-3 move the rate by at most L·1e-3
    let h = 1e-3;
    let lip = s.lr_base * (-s.warm.ln()) + s.lr_base * s.power / s.gamma_inv;
    let mut prev = inverse_lr_at(0.0, &s);
    for i in 1..200_000 {
        let v = inverse_lr_at(i as f64 * h, &s);
        assert!((v - prev).abs() <= lip * h * (1.0 + 1e-9), "jump at {}", i as f64 * h);
        prev = v;
    }
    assert_eq!(inverse_lr_at(7.0, &s), inverse_lr(7, &s));
}

// ---- conditioning

#[test]
fn absent_modalities_become_single_placeholders() {
    let (m, ps) = toy_model(0);
    let mut g = Graph64::new();
    let t = m.cond.encode_or_placeholder(&mut g, &ps, ModalityKind::Text, None).unwrap();
    assert_eq!(g.shape(t), &[1, 64]);
    assert_eq!(g.value(t), ps.value(m.cond.e_t));
    let s = m.cond.encode_or_placeholder(&mut g, &ps, ModalityKind::Sync, None).unwrap();
    assert_eq!(g.value(s), ps.value(m.cond.e_v));
}

#[test]
fn placeholder_contributions_are_identical_across_samples() {
    let (m, ps) = toy_model(0);
    let a = bundle(EventClass::Tone, "a tone").dropped(true, false);
    let b = bundle(EventClass::Bell, "a bell").dropped(true, false);
    let mut g = Graph64::new();
    let ea = m.cond.encode(&mut g, &ps, &a, 0.3, 10).unwrap();
    let eb = m.cond.encode(&mut g, &ps, &b, 0.3, 10).unwrap();
    assert_eq!(g.value(ea.text), g.value(eb.text));
    assert_ne!(g.value(ea.vision), g.value(eb.vision));
}

#[test]
fn same_track_gives_identical_vision_features() {
    let (m, ps) = toy_model(0);
    let (a, b) = (bundle(EventClass::Chirp, "x"), bundle(EventClass::Chirp, "x"));
    let mut g = Graph64::new();
    let va = m.cond.encode_or_placeholder(&mut g, &ps, ModalityKind::Vision, a.vision.as_ref().map(ModalityInput::Features));
    let vb = m.cond.encode_or_placeholder(&mut g, &ps, ModalityKind::Vision, b.vision.as_ref().map(ModalityInput::Features));
    assert_eq!(g.value(va.unwrap()), g.value(vb.unwrap()));
}

#[test]
fn distinct_captions_give_distinct_text_features() {
    let (m, ps) = toy_model(0);
    let vocab = Vocab::synthetic();
    let caps: Vec<String> = EventClass::ALL.iter().flat_map(|c| (0..2).map(move |s| foley_dsp::synth::caption_for(*c, s))).collect();
    let mut feats: Vec<(String, Vec<f64>)> = Vec::new();
    for c in &caps {
        let mut g = Graph64::new();
        let ids = vocab.tokenize(c);
        let v = m.cond.encode_or_placeholder(&mut g, &ps, ModalityKind::Text, Some(ModalityInput::Tokens(&ids))).unwrap();
        if !feats.iter().any(|(k, _)| k == c) {
            feats.push((c.clone(), g.value(v).data().to_vec()));
        }
    }
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            let (a, b) = (&feats[i].1, &feats[j].1);
            let d = if a.len() == b.len() {
                a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            } else {
                f64::INFINITY
            };
            assert!(d > 1e-3, "{} vs {}", feats[i].0, feats[j].0);
        }
    }
}

#[test]
fn sync_upsampling_repeats_nearest_frames() {
    let (m, ps) = toy_model(0);
    let mut rng = SeededRng::new(4);
    let mut g = Graph64::new();
    let f = g.constant(randn(&[2, 64], &mut rng));
    let same = m.cond.sync_project_upsample(&mut g, &ps, f, 2).unwrap();
    let up = m.cond.sync_project_upsample(&mut g, &ps, f, 4).unwrap();
    let (p, u) = (g.value(same).clone(), g.value(up).clone());
    for (i, src) in [0, 0, 1, 1].into_iter().enumerate() {
        assert_eq!(u.row(i), p.row(src));
    }
    let c = g.constant(Tensor::from_f64(&[3, 64], &[0.5; 192]).unwrap());
    let cu = m.cond.sync_project_upsample(&mut g, &ps, c, 7).unwrap();
    let cu = g.value(cu);
    assert!((1..7).all(|r| cu.row(r) == cu.row(0)));
    assert!(matches!(m.cond.sync_project_upsample(&mut g, &ps, f, 0), Err(Error::Input(_))));
}

#[test]
fn duration_halves_are_independent_and_range_checked() {
    let (m, ps) = toy_model(0);
    let mut g = Graph64::new();
    let a = m.cond.duration_embed(&mut g, &ps, &DurationSpec::new(0, 10)).unwrap();
    let b = m.cond.duration_embed(&mut g, &ps, &DurationSpec::new(0, 5)).unwrap();
    let a2 = m.cond.duration_embed(&mut g, &ps, &DurationSpec::new(0, 10)).unwrap();
    let (a, b) = (g.value(a).data().to_vec(), g.value(b).data().to_vec());
    assert_eq!(a, g.value(a2).data());
    assert_eq!(a[..64], b[..64]);
    assert!(a[64..].iter().zip(&b[64..]).all(|(x, y)| x != y));
    for bad in [DurationSpec::new(0, 0), DurationSpec::new(0, 11), DurationSpec::new(11, 5)] {
        assert!(matches!(m.cond.duration_embed(&mut g, &ps, &bad), Err(Error::Input(_))));
    }
}

#[test]
fn duration_gradient_touches_only_selected_rows() {
    let (m, ps) = toy_model(0);
    let mut g = Graph64::new();
    let d = m.cond.duration_embed(&mut g, &ps, &DurationSpec::new(3, 7)).unwrap();
    let l = g.square(d).unwrap();
    let l = g.sum(l).unwrap();
    let grads = g.backward(l).unwrap();
    let params: std::collections::HashMap<_, _> = g.params_of(&ps).collect();
    for (name, row) in [("cond.dur_start.table", 3), ("cond.dur_total.table", 7)] {
        let id = ps.find(name).unwrap();
        let gt = grads.wrt_or_zeros(&g, params[&id]);
        for r in 0..11 {
            let nz = gt.row(r).iter().any(|&v| v != 0.0);
            assert_eq!(nz, r == row, "{name} row {r}");
        }
    }
}

#[test]
fn fused_condition_reduces_to_bias_with_zero_weights() {
    let (m, mut ps) = toy_model(0);
    for name in ["cond.fuse.l1.w", "cond.fuse.l2.w"] {
        let id = ps.find(name).unwrap();
        let z = Tensor::zeros(ps.value(id).shape());
        ps.set(id, z).unwrap();
    }
    let b2 = ps.value(ps.find("cond.fuse.l2.b").unwrap()).clone();
    let mut g = Graph64::new();
    let (x, y) = (bundle(EventClass::Noise, "noise"), ConditionBundle::unconditional(DurationSpec::new(0, 3)));
    for (b, t) in [(&x, 0.1), (&y, 0.9)] {
        let e = m.cond.encode(&mut g, &ps, b, t, 5).unwrap();
        assert_eq!(g.value(e.global).data(), b2.data());
    }
}

#[test]
fn global_condition_depends_on_flow_time() {
    let (m, ps) = toy_model(0);
    let b = bundle(EventClass::Warble, "warble");
    let eval = |t: f64| {
        let mut g = Graph64::new();
        let e = m.cond.encode(&mut g, &ps, &b, t, 5).unwrap();
        g.value(e.global).clone()
    };
    let (a, c, a2) = (eval(0.4), eval(0.4 + 1e-5), eval(0.4));
    assert_eq!(a, a2);
    let col: f64 = a.data().iter().zip(c.data()).map(|(x, y)| ((y - x) / 1e-5).abs()).sum();
    assert!(col > 1e-3, "{col}");
}

#[test]
fn timestep_embedding_is_distinct_and_lipschitz() {
    let d = 64;
    let l = timestep_lipschitz(d);
    let grid: Vec<Vec<f64>> = (0..128).map(|i| timestep_embedding(i as f64 / 127.0, d)).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for i in 0..128 {
        for j in i + 1..128 {
            let dd = dist(&grid[i], &grid[j]);
            assert!(dd > 1e-6);
            assert!(dd <= l * (j - i) as f64 / 127.0 + 1e-12);
        }
    }
}

#[test]
fn batch_of_identical_inputs_gives_identical_rows() {
    let (m, ps) = toy_model(0);
    let b = bundle(EventClass::Bell, "bell");
    let mut g = Graph64::new();
    let rows: Vec<_> = (0..3).map(|_| m.cond.encode(&mut g, &ps, &b, 0.5, 4).unwrap().global).collect();
    assert!(rows.windows(2).all(|w| g.value(w[0]) == g.value(w[1])));
}

#[test]
fn feature_file_round_trip_and_checks() {
    let mut rng = SeededRng::new(2);
    let f = FeatureFile::new(ModalityKind::Vision, 8.0, randn(&[5, 18], &mut rng).map(|v| (v as f32) as f64)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.feat");
    f.write(&p).unwrap();
    let r = FeatureFile::read(&p).unwrap();
    assert_eq!(r, f);
    assert!(r.expect(ModalityKind::Vision, 8.0, 18).is_ok());
    assert!(r.expect(ModalityKind::Sync, 8.0, 18).is_err());
    assert!(r.expect(ModalityKind::Vision, 24.0, 18).is_err());
    let bytes = f.to_bytes().unwrap();
    assert!(matches!(FeatureFile::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Input(_))));
    let bad = String::from_utf8_lossy(&bytes).replace("vision", "smell");
    assert!(FeatureFile::from_bytes(bad.as_bytes()).is_err());
}

// ---- transformer

fn block_inputs(g: &mut Graph64, rng: &mut SeededRng, ta: usize, tv: usize, tt: usize) -> (foley_core::Var, foley_core::Var, foley_core::Var, foley_core::Var, foley_core::Var) {
    let a = g.constant(randn(&[ta, 64], rng));
    let v = g.constant(randn(&[tv, 64], rng));
    let t = g.constant(randn(&[tt, 64], rng));
    let af = g.constant(randn(&[ta, 64], rng));
    let gc = g.constant(randn(&[1, 64], rng));
    (a, v, t, af, gc)
}

fn ctx(g: &mut Graph64, gc: foley_core::Var, af: foley_core::Var) -> BlockContext {
    BlockContext { silu_g: g.silu(gc).unwrap(), align: Some(af), heads: 1, rope_base: 10_000.0, vision_scale: 43.0 / 8.0 }
}

#[test]
fn zero_gates_make_the_stack_an_identity() {
    let (m, ps) = toy_model(3);
    let ps32 = ps.cast::<f32>();
    let mut rng = SeededRng::new(9);
    let mut g: Graph<f32> = Graph::new();
    let a = g.constant(randn(&[11, 64], &mut rng).cast());
    let v = g.constant(randn(&[8, 64], &mut rng).cast());
    let t = g.constant(randn(&[3, 64], &mut rng).cast());
    let af = g.constant(randn(&[11, 64], &mut rng).cast());
    let gc = g.constant(randn(&[1, 64], &mut rng).cast());
    let c = BlockContext { silu_g: g.silu(gc).unwrap(), align: Some(af), heads: 1, rope_base: 1e4, vision_scale: 5.0 };
    let y = m.stack(&mut g, &ps32, a, v, t, &c).unwrap();
    assert!(g.value(y).max_abs_diff(g.value(a)).unwrap() <= 1e-6);
}

#[test]
fn joint_attention_is_equivariant_to_text_permutation() {
    let (m, mut ps) = toy_model(5);
    let mut rng = SeededRng::new(6);
    randomize(&mut ps, ".mod.", 0.2, &mut rng);
    let blk = &m.joint[0];
    let perm = [3, 0, 4, 1, 2];
    let mut g = Graph64::new();
    let (a, v, t, af, gc) = block_inputs(&mut g, &mut rng, 6, 4, 5);
    let tp = g.gather(t, &perm).unwrap();
    let c = ctx(&mut g, gc, af);
    let (a1, v1, t1) = blk.forward(&mut g, &ps, a, Some(v), Some(t), &c).unwrap();
    let (a2, v2, t2) = blk.forward(&mut g, &ps, a, Some(v), Some(tp), &c).unwrap();
    assert!(g.value(a1).max_abs_diff(g.value(a2)).unwrap() < 1e-5);
    assert!(g.value(v1.unwrap()).max_abs_diff(g.value(v2.unwrap())).unwrap() < 1e-5);
    let t1p = g.gather(t1.unwrap(), &perm).unwrap();
    assert!(g.value(t1p).max_abs_diff(g.value(t2.unwrap())).unwrap() < 1e-5);
    assert_eq!(g.shape(t1.unwrap()), &[5, 64]);
    assert_eq!(g.shape(v1.unwrap()), &[4, 64]);
    // the block is not trivially the identity here
    assert!(g.value(a1).max_abs_diff(g.value(a)).unwrap() > 1e-3);
}

#[test]
fn single_block_equals_joint_block_with_empty_streams() {
    let (m, mut ps) = toy_model(7);
    let mut rng = SeededRng::new(8);
    randomize(&mut ps, ".mod.", 0.2, &mut rng);
    let jb = &m.joint[0];
    let sb = SingleBlock { audio: jb.audio.clone() };
    let mut g = Graph64::new();
    let (a, _, _, af, gc) = block_inputs(&mut g, &mut rng, 7, 1, 1);
    let c = ctx(&mut g, gc, af);
    let (j, v, t) = jb.forward(&mut g, &ps, a, None, None, &c).unwrap();
    let s = sb.forward(&mut g, &ps, a, &c).unwrap();
    assert!(v.is_none() && t.is_none());
    assert_eq!(g.value(j), g.value(s));
    let s2 = sb.forward(&mut g, &ps, a, &c).unwrap();
    assert_eq!(g.value(s), g.value(s2));
}

#[test]
fn head_on_one_frame_uses_only_the_center_tap() {
    let (m, mut ps) = toy_model(1);
    let mut rng = SeededRng::new(2);
    let x = randn(&[1, 64], &mut rng);
    let gc = randn(&[1, 64], &mut rng);
    let run = |ps: &ParamStore64| {
        let mut g = Graph64::new();
        let (xv, gv) = (g.constant(x.clone()), g.constant(gc.clone()));
        let s = g.silu(gv).unwrap();
        let y = m.head.forward(&mut g, ps, xv, s).unwrap();
        g.value(y).clone()
    };
    let before = run(&ps);
    assert_eq!(before.shape(), &[1, 3]);
    let id = m.head.conv.w;
    let mut w = ps.value(id).clone();
    for c in 0..64 {
        w.data_mut()[c * 3] += 1.0;
        w.data_mut()[c * 3 + 2] -= 2.0;
    }
    ps.set(id, w).unwrap();
    assert_eq!(run(&ps), before);
}

#[test]
fn head_gradients_match_finite_differences() {
    let (m, mut ps) = toy_model(2);
    let mut rng = SeededRng::new(3);
    randomize(&mut ps, "head.mod", 0.2, &mut rng);
    let x = randn(&[5, 64], &mut rng);
    let gc = randn(&[1, 64], &mut rng);
    let r = check_inputs(&[x.clone(), gc.clone()], DEFAULT_EPS, |g, v| {
        let s = g.silu(v[1])?;
        let y = m.head.forward(g, &ps, v[0], s)?;
        let y = g.square(y)?;
        g.sum(y)
    })
    .unwrap();
    assert!(r.passes(1e-4), "{:?}", r.rel_errors);
    for id in ps.ids().collect::<Vec<_>>() {
        ps.set_trainable(id, ps.name(id).starts_with("head."));
    }
    let r = check_params(&ps, DEFAULT_EPS, |g, ps| {
        let (xv, gv) = (g.constant(x.clone()), g.constant(gc.clone()));
        let s = g.silu(gv)?;
        let y = m.head.forward(g, ps, xv, s)?;
        let y = g.square(y)?;
        g.sum(y)
    })
    .unwrap();
    assert!(r.passes(1e-4), "{:?}", r.rel_errors);
}

#[test]
fn cfm_loss_gradients_match_finite_differences() {
    let (m, mut ps) = toy_model(4);
    let mut rng = SeededRng::new(5);
    randomize(&mut ps, ".mod.", 0.2, &mut rng);
    let b = bundle(EventClass::Clicks, "clicks");
    let x0 = randn(&[4, 3], &mut rng);
    let x1 = randn(&[4, 3], &mut rng);
    let s = FlowSample::new(x0, x1, 0.37).unwrap();
    // with respect to the interpolant
    let r = check_inputs(&[s.x_t.clone()], DEFAULT_EPS, |g, v| {
        let y = m.velocity(g, &ps, v[0], s.t, &b)?;
        let u = g.constant(s.u.clone());
        g.mse(y, u)
    })
    .unwrap();
    assert!(r.passes(1e-4), "{:?}", r.rel_errors);
    // with respect to every vector parameter and the placeholders
    for id in ps.ids().collect::<Vec<_>>() {
        let keep = ps.value(id).rank() == 1 || ps.name(id).starts_with("cond.e_") || ps.name(id) == "head.proj.w";
        ps.set_trainable(id, keep);
    }
    let b = b.dropped(true, false);
    let r = check_params(&ps, DEFAULT_EPS, |g, ps| cfm_loss(g, &m, ps, &b, &s)).unwrap();
    assert!(r.passes(1e-4), "max {}", r.max_rel_error());
}

#[test]
fn flow_sample_interpolates_exactly() {
    let mut rng = SeededRng::new(1);
    let (x0, x1) = (randn(&[3, 2], &mut rng), randn(&[3, 2], &mut rng));
    let s = FlowSample::new(x0.clone(), x1.clone(), 0.25).unwrap();
    for i in 0..6 {
        assert_eq!(s.x_t.data()[i], 0.25 * x1.data()[i] + 0.75 * x0.data()[i]);
        assert_eq!(s.u.data()[i], x1.data()[i] - x0.data()[i]);
    }
    assert!(matches!(FlowSample::new(x0, randn(&[2, 2], &mut rng), 0.5), Err(Error::Input(_))));
}

#[test]
fn zero_velocity_model_loss_is_mean_squared_displacement() {
    let (m, mut ps) = toy_model(6);
    for name in ["head.proj.w", "head.proj.b"] {
        let id = ps.find(name).unwrap();
        let z = Tensor::zeros(ps.value(id).shape());
        ps.set(id, z).unwrap();
    }
    let mut rng = SeededRng::new(2);
    let b = bundle(EventClass::Drone, "drone");
    let mut samples: Vec<FlowSample<f64>> = (0..4)
        .map(|i| FlowSample::new(randn(&[5, 3], &mut rng), randn(&[5, 3], &mut rng), 0.2 * i as f64).unwrap())
        .collect();
    let batch_loss = |samples: &[FlowSample<f64>]| {
        let mut g = Graph64::new();
        let ls: Vec<f64> =
            samples.iter().map(|s| {
                let l = cfm_loss(&mut g, &m, &ps, &b, s).unwrap();
                g.value(l).item().unwrap()
            }).collect();
        ls.iter().sum::<f64>() / ls.len() as f64
    };
    let want = samples.iter().map(|s| s.u.sq_norm() / 15.0).sum::<f64>() / 4.0;
    let got = batch_loss(&samples);
    assert!((got - want).abs() < 1e-12);
    samples.reverse();
    assert!((batch_loss(&samples) - got).abs() < 1e-12);
}

#[test]
fn velocity_rejects_wrong_latent_width() {
    let (m, ps) = toy_model(0);
    let mut g = Graph64::new();
    let x = g.constant(Tensor::zeros(&[4, 5]));
    let b = ConditionBundle::unconditional(DurationSpec::new(0, 1));
    assert!(matches!(m.velocity(&mut g, &ps, x, 0.5, &b), Err(Error::Input(_))));
}

// ---- sampler

#[test]
fn euler_is_exact_for_constant_fields() {
    let c = Tensor::from_f64(&[2, 2], &[0.5, -1.25, 2.0, 0.0]).unwrap();
    let x0 = Tensor::from_f64(&[2, 2], &[1.0, 2.0, -3.0, 0.25]).unwrap();
    for steps in [1, 3, 20, 64] {
        let f = |_t: f64, _x: &Tensor<f64>| Ok(c.clone());
        let x = euler_integrate(&f, x0.clone(), steps, None).unwrap();
        for i in 0..4 {
            assert!((x.data()[i] - (x0.data()[i] + c.data()[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn euler_on_linear_field_is_a_geometric_product() {
    let x0 = Tensor::from_f64(&[1, 3], &[1.0, -0.5, 2.0]).unwrap();
    let f = |_t: f64, x: &Tensor<f64>| Ok(x.clone());
    for steps in [5usize, 20, 100] {
        let x = euler_integrate(&f, x0.clone(), steps, None).unwrap();
        let dt = 1.0 / steps as f64;
        let factor = (1.0 + dt).powi(steps as i32);
        for i in 0..3 {
            let x0i = x0.data()[i];
            assert!((x.data()[i] - x0i * factor).abs() < 1e-12 * x0i.abs().max(1.0));
            assert!((x.data()[i] - std::f64::consts::E * x0i).abs() <= std::f64::consts::E * x0i.abs() * dt);
        }
    }
}

#[test]
fn euler_reports_the_failing_step() {
    let f = |t: f64, x: &Tensor<f64>| Ok(x.map(|_| if t >= 0.5 { f64::NAN } else { 1.0 }));
    match euler_integrate(&f, Tensor::zeros(&[1, 1]), 4, None) {
        Err(Error::Numeric(m)) => assert!(m.contains("step 2"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(euler_integrate(&f, Tensor::zeros(&[1, 1]), 0, None).is_err());
}

#[test]
fn model_sampling_is_deterministic_and_traced() {
    let (m, ps) = toy_model(0);
    let ps32 = ps.cast::<f32>();
    let b = bundle(EventClass::Tone, "tone");
    let field = ModelField { model: &m, ps: &ps32, bundle: &b };
    let mut trace = Vec::new();
    let a = euler_sample(&field, &[6, 3], 42, DEFAULT_STEPS, Some(&mut trace)).unwrap();
    let c = euler_sample(&field, &[6, 3], 42, DEFAULT_STEPS, None).unwrap();
    assert_eq!(a.data(), c.data());
    let d = euler_sample(&field, &[6, 3], 43, DEFAULT_STEPS, None).unwrap();
    assert_ne!(a.data(), d.data());
    let text = String::from_utf8(trace).unwrap();
    assert_eq!(text.lines().count(), DEFAULT_STEPS + 1);
    assert!(text.starts_with("step,t,mean_abs_v,mean_abs_x"));
    assert_eq!(noise::<f32>(&[2, 2], 7).unwrap(), noise::<f32>(&[2, 2], 7).unwrap());
}

// ---- trainer

fn toy_data() -> Vec<FlowExample> {
    let mut rng = SeededRng::new(11);
    let cfg = toy_config();
    EventClass::ALL[..6]
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let b = ConditionBundle::from_event_track(&track(c, 0.1 * i as f64), c.name(), &Vocab::synthetic(), 1.0, &cfg)
                .unwrap();
            // a class-dependent latent pattern
            let x1 = Tensor::from_f64(
                &[8, 3],
                &(0..24).map(|k| ((k as f64 + i as f64) * 0.7).sin() * 2.0 + 0.1 * rng.normal()).collect::<Vec<_>>(),
            )
            .unwrap();
            FlowExample { x1, bundle: b }
        })
        .collect()
}

fn toy_train(seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: 60,
        batch: 2,
        seed,
        schedule: LrSchedule { lr_base: 1e-3, lr_final: 1e-4, gamma_inv: 1e3, power: 0.5, warm: 0.9 },
        ..TrainConfig::default()
    }
}

fn trainer(seed: u64, data: &[FlowExample]) -> FlowTrainer {
    let xs: Vec<&Tensor<f64>> = data.iter().map(|e| &e.x1).collect();
    FlowTrainer::new(toy_config(), toy_train(seed), LatentStats::fit(&xs).unwrap()).unwrap()
}

#[test]
fn dropout_rates_match_configuration() {
    let data = toy_data();
    let mut rng = SeededRng::new(3);
    let cfg = TrainConfig { batch: 10_000, p_drop_text: 0.3, p_drop_vision: 0.6, ..TrainConfig::default() };
    let b = compose_pairwise_batch(&data, &cfg, &mut rng).unwrap();
    let ft = b.iter().filter(|e| !e.bundle.text_present()).count() as f64 / 1e4;
    let fv = b.iter().filter(|e| !e.bundle.vision_present()).count() as f64 / 1e4;
    assert!((ft - 0.3).abs() < 0.02 && (fv - 0.6).abs() < 0.02, "{ft} {fv}");
    assert!(b.iter().all(|e| e.bundle.duration.seconds_total >= 1 && e.x1.numel() > 0));
    assert!(b.iter().all(|e| e.bundle.vision_present() || !e.bundle.sync_present()));

    let none = TrainConfig { batch: 200, p_drop_text: 0.0, p_drop_vision: 0.0, ..TrainConfig::default() };
    let b = compose_pairwise_batch(&data, &none, &mut rng).unwrap();
    assert!(b.iter().all(|e| e.bundle.text_present() && e.bundle.vision_present()));
    let all_text = TrainConfig { batch: 200, p_drop_text: 1.0, ..TrainConfig::default() };
    let b = compose_pairwise_batch(&data, &all_text, &mut rng).unwrap();
    assert!(b.iter().all(|e| !e.bundle.has_text));
}

#[test]
fn training_is_deterministic_and_reports_schedule() {
    let data = toy_data();
    let run = || {
        let mut t = trainer(1, &data);
        let mut csv = Vec::new();
        let r = t.run_until(&data, 20, &mut csv).unwrap();
        (csv, r)
    };
    let (a, ra) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    let sched = toy_train(1).schedule;
    for r in &ra {
        assert_eq!(r.lr, inverse_lr(r.step, &sched));
    }
    assert!(String::from_utf8(a).unwrap().starts_with(StepReport::CSV_HEADER));
}

#[test]
fn toy_run_lowers_the_loss() {
    let data = toy_data();
    let mut t = trainer(2, &data);
    let cfg = TrainConfig { total_steps: 200, batch: 4, ..t.cfg.clone() };
    t.cfg = cfg;
    let r = t.run(&data, &mut std::io::sink()).unwrap();
    let mean = |s: &[StepReport]| s.iter().map(|r| r.loss_cfm).sum::<f64>() / s.len() as f64;
    assert!(mean(&r[180..]) < mean(&r[..20]), "{} vs {}", mean(&r[180..]), mean(&r[..20]));
}

#[test]
fn resume_reproduces_the_unbroken_run() {
    let data = toy_data();
    let mut full = trainer(3, &data);
    let mut csv_full = Vec::new();
    full.run_until(&data, 60, &mut csv_full).unwrap();

    let mut part = trainer(3, &data);
    let mut csv_part = Vec::new();
    part.run_until(&data, 10, &mut csv_part).unwrap();
    let bytes = part.checkpoint().unwrap().to_bytes().unwrap();
    drop(part);
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), bytes);
    let mut resumed = FlowTrainer::resume(&ck).unwrap();
    assert_eq!(resumed.step(), 10);
    resumed.run_until(&data, 60, &mut csv_part).unwrap();
    assert_eq!(String::from_utf8(csv_part).unwrap(), String::from_utf8(csv_full).unwrap());
    assert_eq!(resumed.checkpoint().unwrap().to_bytes().unwrap(), full.checkpoint().unwrap().to_bytes().unwrap());
}

#[test]
fn checkpoint_files_round_trip_and_reject_truncation() {
    let data = toy_data();
    let mut t = trainer(4, &data);
    t.run_until(&data, 3, &mut std::io::sink()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    t.checkpoint().unwrap().save(&p1).unwrap();
    Checkpoint::load(&p1).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let bytes = std::fs::read(&p1).unwrap();
    std::fs::write(&p2, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(Checkpoint::load(&p2), Err(Error::Integrity(_))));

    let f = TrainedFlow::from_checkpoint(&Checkpoint::load(&p1).unwrap()).unwrap();
    let b = &data[0].bundle;
    assert_eq!(f.generate(b, 8, 5, 4, None).unwrap(), t.flow.generate(b, 8, 5, 4, None).unwrap());
}

#[test]
fn frozen_parameters_stay_fixed() {
    let data = toy_data();
    let mut t = trainer(5, &data);
    let n = t.flow.ps.set_trainable_prefix("cond.", false);
    assert!(n > 0);
    let before = t.flow.ps.fingerprint("cond.");
    let other = t.flow.ps.fingerprint("joint0.");
    t.run_until(&data, 5, &mut std::io::sink()).unwrap();
    assert_eq!(t.flow.ps.fingerprint("cond."), before);
    assert_ne!(t.flow.ps.fingerprint("joint0."), other);
}

#[test]
fn latent_stats_round_trip() {
    let data = toy_data();
    let xs: Vec<&Tensor<f64>> = data.iter().map(|e| &e.x1).collect();
    let s = LatentStats::fit(&xs).unwrap();
    let z = s.normalize(&data[0].x1).unwrap();
    let back = s.denormalize(&z).unwrap();
    assert!(back.max_abs_diff(&data[0].x1).unwrap() < 1e-12);
}
