use foley_codec::disc::Critic;
use foley_codec::stereo::log_two_sigmoid;
use foley_codec::*;
use foley_core::ckpt::Checkpoint;
use foley_core::gradcheck::{check_inputs, check_params, DEFAULT_EPS};
use foley_core::nn::{ParamId, ParamStore};
use foley_core::{Graph, ParamStore64, Result, Scalar, SeededRng, Tensor, Tensor64, Var};
use foley_dsp::{synth_event_clip, EventClass, MelAnalyzer, MelConfig, MelSpectrogram};
use proptest::prelude::*;

const TOL: f64 = 1e-4;

fn small_mel() -> MelConfig {
    MelConfig { sample_rate: 16_000, n_fft: 512, hop: 256, n_mels: 8, f_min: 0.0, f_max: 8000.0, log_floor: 1e-5 }
}

fn small_cfg() -> CodecConfig {
    CodecConfig { d_latent: 3, n_enc_layers: 5, channels: 5, mel: small_mel(), ..Default::default() }
}

fn randn(shape: &[usize], seed: u64) -> Tensor64 {
    Tensor::randn(shape, &mut SeededRng::new(seed))
}

fn small_mels(n: usize, secs: f64) -> Vec<MelSpectrogram> {
    let an = MelAnalyzer::new(small_mel()).unwrap();
    (0..n)
        .map(|i| an.analyze(&synth_event_clip(EventClass::ALL[i % 9], secs, i as u64, 16_000).unwrap().0).unwrap())
        .collect()
}

#[test]
fn kl_matches_closed_form() {
    let (mu, ls) = (randn(&[3, 5], 1), randn(&[3, 5], 2));
    let mut expected = 0.0;
    for (m, s) in mu.data().iter().zip(ls.data()) {
        let var = (2.0 * s).exp();
        expected += 0.5 * (m * m + var - 1.0 - var.ln());
    }
    expected /= 5.0;
    let mut g = Graph::new();
    let (a, b) = (g.input(mu), g.input(ls));
    let kl = foley_codec::losses::kl_divergence(&mut g, a, b).unwrap();
    assert!((g.value(kl).data()[0] - expected).abs() < 1e-12);
}

#[test]
fn kl_of_standard_normal_is_zero_and_margin_clamps() {
    let mut g = Graph::new();
    let mu = g.input(Tensor64::zeros(&[4, 6]));
    let ls = g.input(Tensor64::zeros(&[4, 6]));
    let kl = foley_codec::losses::kl_divergence(&mut g, mu, ls).unwrap();
    assert_eq!(g.value(kl).data()[0], 0.0);
    let m = foley_codec::losses::kl_loss_with_margin(&mut g, &[kl], 0.1).unwrap();
    assert_eq!(g.value(m).data()[0], 0.0);
    let grads = g.backward(m).unwrap();
    assert!(grads.wrt_or_zeros(&g, mu).data().iter().all(|&v| v == 0.0));
}

#[test]
fn hinge_at_zero_scores_is_two() {
    let mut g: Graph<f64> = Graph::new();
    let r = g.input(Tensor::scalar(0.0));
    let f = g.input(Tensor::scalar(0.0));
    let h = foley_codec::losses::hinge_loss(&mut g, &[r], &[f]).unwrap();
    assert_eq!(g.value(h).data()[0], 2.0);
}

#[test]
fn loss_gradients_match_finite_differences() {
    use foley_codec::losses::*;
    let a = randn(&[4, 6], 3);
    let b = randn(&[4, 6], 4);
    let r = check_inputs(&[a.clone(), b.clone()], DEFAULT_EPS, |g, v| recon_mse(g, v[0], v[1])).unwrap();
    assert!(r.passes(TOL), "mse {:?}", r.rel_errors);
    // margin active: KL of these moments is well above 0.1
    let r = check_inputs(&[a.clone(), b.map(|v| v * 0.5)], DEFAULT_EPS, |g, v| {
        let k1 = kl_divergence(g, v[0], v[1])?;
        let k2 = kl_divergence(g, v[1], v[0])?;
        kl_loss_with_margin(g, &[k1, k2], 0.1)
    })
    .unwrap();
    assert!(r.passes(TOL), "kl {:?}", r.rel_errors);
    let scores = randn(&[4], 5).map(|v| v * 0.4);
    let r = check_inputs(&[scores.clone()], DEFAULT_EPS, |g, v| {
        let s: Vec<Var> = (0..4).map(|i| g.slice(v[0], 0, i, 1)).collect::<Result<_>>()?;
        hinge_loss(g, &s[..2], &s[2..])
    })
    .unwrap();
    assert!(r.passes(TOL), "hinge {:?}", r.rel_errors);
    let r = check_inputs(&[scores], DEFAULT_EPS, |g, v| {
        let s: Vec<Var> = (0..4).map(|i| g.slice(v[0], 0, i, 1)).collect::<Result<_>>()?;
        generator_loss(g, &s)
    })
    .unwrap();
    assert!(r.passes(TOL), "generator {:?}", r.rel_errors);
}

#[test]
fn vae_objective_gradients_match_finite_differences() {
    let mut ps = ParamStore64::new();
    let vae = MelVae::new(small_cfg(), &mut ps, &mut SeededRng::new(9)).unwrap();
    let x = randn(&[8, 6], 10).map(|v| v * 2.0 - 4.0);
    let noise = randn(&[3, 3], 11);
    let r = check_params(&ps, DEFAULT_EPS, |g, ps| {
        let xv = g.constant(x.clone());
        let (mu, ls) = vae.encode(g, ps, xv)?;
        let e = g.constant(noise.clone());
        let z = MelVae::reparameterize(g, mu, ls, e)?;
        let y = vae.decode(g, ps, z)?;
        let mse = foley_codec::losses::recon_mse(g, xv, y)?;
        let kl = foley_codec::losses::kl_divergence(g, mu, ls)?;
        let kl = g.scale(kl, 0.3)?;
        g.add(mse, kl)
    })
    .unwrap();
    assert!(r.passes(TOL), "{:?}", r.rel_errors);
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let mut ps = ParamStore64::new();
    let d = Discriminator::new(&mut ps, 2, -4.0, 4.0, &mut SeededRng::new(1));
    let x = randn(&[8, 8], 2);
    let r = check_params(&ps, DEFAULT_EPS, |g, ps| {
        let xv = g.constant(x.clone());
        d.score(g, ps, xv)
    })
    .unwrap();
    assert!(r.passes(TOL), "{:?}", r.rel_errors);
}

/// `D(x) = Σ w ⊙ x`.
struct LinearCritic(ParamId);

impl Critic for LinearCritic {
    fn score<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.0);
        let p = g.mul(w, x)?;
        g.sum(p)
    }
}

#[test]
fn r1_of_linear_critic_is_weight_norm() {
    let mut ps = ParamStore64::new();
    let w = randn(&[3, 4], 7);
    let id = ps.add("w", w.clone());
    let reals = vec![randn(&[3, 4], 8), randn(&[3, 4], 9)];
    let (pen, grads) = r1_penalty(&LinearCritic(id), &ps, &reals).unwrap();
    assert!((pen - w.sq_norm()).abs() < 1e-12);
    // d‖w‖²/dw = 2w
    let expect = w.map(|v| 2.0 * v);
    assert!(grads.get(id).max_abs_diff(&expect).unwrap() < 1e-12);
}

#[test]
fn r1_parameter_gradient_matches_finite_differences() {
    let mut ps = ParamStore64::new();
    let d = Discriminator::new(&mut ps, 2, -4.0, 4.0, &mut SeededRng::new(3));
    let reals = vec![randn(&[8, 8], 4), randn(&[8, 8], 5)];
    let (_, grads) = r1_penalty(&d, &ps, &reals).unwrap();
    let eps = 1e-6;
    let mut work = ps.clone();
    let mut worst: f64 = 0.0;
    for id in ps.ids() {
        let analytic = grads.get(id).to_f64_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + eps;
            let up = r1_penalty(&d, &work, &reals).unwrap().0;
            work.value_mut(id).data_mut()[j] = orig - eps;
            let down = r1_penalty(&d, &work, &reals).unwrap().0;
            work.value_mut(id).data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(diff / norm);
    }
    assert!(worst < TOL, "{worst}");
}

#[test]
fn stage_trace_follows_ramps() {
    let s = StageSchedule::default();
    for step in 1..=2000u64 {
        let w = stage_weights(step, &s);
        let (stage, kl, gan) = match step {
            1..=500 => (1, 0.0, 0.0),
            501..=1000 => (2, 1e-2 * (step - 500) as f64 / 500.0, 0.0),
            1001..=1500 => (3, 1e-2, 0.1 * (step - 1000) as f64 / 500.0),
            _ => (4, 1e-2, 0.1),
        };
        assert_eq!(w.stage, stage);
        assert!((w.gamma_kl - kl).abs() <= 1e-15 && (w.gamma_gan - gan).abs() <= 1e-15, "step {step}");
    }
}

#[test]
fn odd_frame_count_round_trips_length() {
    let mut ps = ParamStore::<f32>::new();
    let vae = MelVae::new(small_cfg(), &mut ps, &mut SeededRng::new(1)).unwrap();
    let m = &small_mels(1, 1.0)[0];
    assert_eq!(m.n_frames % 2, 1);
    let post = vae.encode_mel(&ps, m).unwrap();
    assert_eq!(post.mu.shape(), &[m.n_frames.div_ceil(2), 3]);
    assert_eq!(vae.reconstruct(&ps, m).unwrap().n_frames, m.n_frames);
}

#[test]
fn zero_field_reproduces_mono_exactly() {
    let m = &small_mels(1, 1.0)[0];
    let (l, r) = split_log(m.data(), &vec![0.0; m.data().len()]).unwrap();
    assert_eq!(l, m.data());
    assert_eq!(r, m.data());
    let mut ps = ParamStore::<f32>::new();
    let st = MonoToStereo::new(&mut ps, 8, 4, -4.0, 4.0, &mut SeededRng::new(0)).unwrap();
    let (l, r) = st.mono_to_stereo(&ps, m).unwrap();
    assert_eq!((&l, &r), (m, m));
}

#[test]
fn synthetic_pan_training_learns_the_field() {
    let mels: Vec<_> = small_mels(4, 1.0).iter().map(|m| m.to_channels_first::<f32>()).collect();
    let mut ps = ParamStore::<f32>::new();
    let st = MonoToStereo::new(&mut ps, 8, 8, -4.0, 4.0, &mut SeededRng::new(0)).unwrap();
    let before = st.train_synthetic(&mut ps.clone(), &mels, 1, 3e-3, &mut SeededRng::new(1)).unwrap();
    let after = st.train_synthetic(&mut ps, &mels, 300, 3e-3, &mut SeededRng::new(1)).unwrap();
    assert!(after < 0.1 * before, "{before} -> {after}");
}

#[test]
fn stereo_render_preserves_frame_energy() {
    let cfg = MelConfig::default();
    let an = MelAnalyzer::new(cfg.clone()).unwrap();
    let m = an.analyze(&synth_event_clip(EventClass::Warble, 1.0, 4, 44_100).unwrap().0).unwrap();
    let pan = foley_codec::stereo::synthetic_pan(cfg.n_mels, 1.0);
    let s: Vec<f64> = (0..m.n_frames).flat_map(|_| pan.clone()).collect();
    let (mono, st) = render_stereo(&an, &m, &s, 8).unwrap();
    let frame_energy = |x: &[f64]| -> Vec<f64> { x.chunks(cfg.hop).map(|c| c.iter().map(|v| v * v).sum()).collect() };
    let em = frame_energy(mono.samples().unwrap());
    let (el, er) = (frame_energy(st.channel(0)), frame_energy(st.channel(1)));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let stereo_mean = 0.5 * (mean(&el) + mean(&er));
    let rel = (stereo_mean - mean(&em)).abs() / mean(&em);
    assert!(rel < 1e-3, "{rel}");
    assert!(st.channel(0) != st.channel(1));
}

#[test]
fn planned_decoder_matches_graph_decoder() {
    let mut ps = ParamStore::<f32>::new();
    let vae = MelVae::new(small_cfg(), &mut ps, &mut SeededRng::new(5)).unwrap();
    let z = Tensor::<f32>::randn(&[7, 3], &mut SeededRng::new(6));
    let reference = vae.decode_latent(&ps, &z).unwrap();
    for fixed in [7, 8, 16] {
        let plan = PlannedDecoder::new(&vae, &ps, fixed).unwrap();
        let got = plan.decode_latent(&z).unwrap();
        assert_eq!(got.n_frames, 14);
        let dev = got.data().iter().zip(reference.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-4, "fixed {fixed}: {dev}");
    }
    let plan = PlannedDecoder::new(&vae, &ps, 6).unwrap();
    assert!(plan.decode_latent(&z).is_err());
}

fn tiny_train_cfg(steps: u64) -> CodecTrainConfig {
    CodecTrainConfig {
        steps,
        batch: 2,
        crop_frames: 8,
        stereo_steps: 5,
        schedule: StageSchedule { stage1_end: 10, stage2_end: 20, stage3_end: 30, ..Default::default() },
        ..Default::default()
    }
}

fn run_csv(t: &mut CodecTrainer, data: &[foley_core::Tensor32], until: u64) -> String {
    let mut out = Vec::new();
    t.run_until(data, until, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn training_is_deterministic_and_resumes_exactly() {
    let data = training_tensors(&small_mels(6, 0.6), 8).unwrap();
    let mut a = CodecTrainer::new(small_cfg(), tiny_train_cfg(60)).unwrap();
    let full = run_csv(&mut a, &data, 60);
    let mut b = CodecTrainer::new(small_cfg(), tiny_train_cfg(60)).unwrap();
    assert_eq!(run_csv(&mut b, &data, 60), full);

    let mut c = CodecTrainer::new(small_cfg(), tiny_train_cfg(60)).unwrap();
    let head = run_csv(&mut c, &data, 25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("codec.ckpt");
    c.checkpoint().unwrap().save(&path).unwrap();
    let mut d = CodecTrainer::resume(&Checkpoint::load(&path).unwrap()).unwrap();
    let tail = run_csv(&mut d, &data, 60);
    assert_eq!(head + &tail, full);
    assert_eq!(d.model.gen.fingerprint(""), a.model.gen.fingerprint(""));
    assert_eq!(d.model.dps.fingerprint(""), a.model.dps.fingerprint(""));
}

#[test]
fn last_stage_freezes_encoder_only() {
    let data = training_tensors(&small_mels(4, 0.6), 8).unwrap();
    let mut t = CodecTrainer::new(small_cfg(), tiny_train_cfg(45)).unwrap();
    run_csv(&mut t, &data, 30);
    let (enc, dec, disc) = (t.model.gen.fingerprint("enc."), t.model.gen.fingerprint("dec."), t.model.dps.fingerprint(""));
    let reports = t.run_until(&data, 45, &mut std::io::sink()).unwrap();
    assert!(reports.iter().all(|r| r.stage == 4));
    assert_eq!(t.model.gen.fingerprint("enc."), enc);
    assert_ne!(t.model.gen.fingerprint("dec."), dec);
    assert_ne!(t.model.dps.fingerprint(""), disc);
}

#[test]
fn reported_total_is_weighted_sum() {
    let data = training_tensors(&small_mels(4, 0.6), 8).unwrap();
    let mut t = CodecTrainer::new(small_cfg(), tiny_train_cfg(40)).unwrap();
    for r in t.run_until(&data, 40, &mut std::io::sink()).unwrap() {
        let expect = r.l_mse + r.gamma_kl * r.l_kl + r.gamma_gan * (r.l_g + r.l_d);
        assert!((r.total - expect).abs() <= 1e-6 * expect.abs().max(1.0));
        if r.gamma_gan == 0.0 {
            assert_eq!((r.l_g, r.l_d, r.l_r1), (0.0, 0.0, 0.0));
        }
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let t = CodecTrainer::new(small_cfg(), tiny_train_cfg(10)).unwrap();
    let mut bytes = t.checkpoint().unwrap().to_bytes().unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(foley_core::Error::Integrity(_))));
}

#[test]
fn checkpointed_model_reconstructs_identically() {
    let t = CodecTrainer::new(small_cfg(), tiny_train_cfg(10)).unwrap();
    let m = CodecModel::from_checkpoint(&t.checkpoint().unwrap()).unwrap();
    let mel = &small_mels(1, 0.6)[0];
    assert_eq!(m.vae.reconstruct(&m.gen, mel).unwrap(), t.model.vae.reconstruct(&t.model.gen, mel).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_conserves_energy(mono in prop::collection::vec(-11.0f64..5.0, 1..64), seed in 0u64..1000) {
        let mut rng = SeededRng::new(seed);
        let s: Vec<f64> = mono.iter().map(|_| 4.0 * rng.normal()).collect();
        let (l, r) = split_log(&mono, &s).unwrap();
        for i in 0..mono.len() {
            let sum = l[i].exp() + r[i].exp();
            let want = 2.0 * mono[i].exp();
            prop_assert!((sum - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn log_two_sigmoid_is_odd_complement(s in -50.0f64..50.0) {
        let total = log_two_sigmoid(s).exp() + log_two_sigmoid(-s).exp();
        prop_assert!((total - 2.0).abs() < 1e-12);
    }
}
