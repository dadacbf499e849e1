use foley_dsp::mel::center_frequencies;
use foley_dsp::synth::spectral_flatness;
use foley_dsp::*;
use proptest::prelude::*;
use std::f64::consts::PI;

const SR: u32 = 44_100;

fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
    let n = (secs * SR as f64) as usize;
    Waveform::mono(SR, (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect()).unwrap()
}

/// Log-spectral distance between two log-mel spectrograms, in log10 units.
fn mel_lsd(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
    let n = a.n_frames.min(b.n_frames);
    let mut acc = 0.0;
    for t in 0..n {
        let s: f64 = a.frame(t).iter().zip(b.frame(t)).map(|(x, y)| ((x - y) / std::f64::consts::LN_10).powi(2)).sum();
        acc += (s / a.n_mels() as f64).sqrt();
    }
    acc / n as f64
}

#[test]
fn silence_sits_on_the_floor() {
    let cfg = MelConfig::default();
    let m = mel_spectrogram(&Waveform::silence(SR, 4096), &cfg).unwrap();
    assert!(m.data().iter().all(|&v| v == cfg.log_floor.ln()));
}

#[test]
fn pure_tone_peaks_in_nearest_band() {
    let cfg = MelConfig::default();
    let m = mel_spectrogram(&tone(440.0, 0.5, 0.5), &cfg).unwrap();
    let centers = center_frequencies(&cfg);
    let nearest = (0..cfg.n_mels)
        .min_by(|&a, &b| (centers[a] - 440.0).abs().total_cmp(&(centers[b] - 440.0).abs()))
        .unwrap();
    let f = m.frame(m.n_frames / 2);
    let argmax = (0..cfg.n_mels).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
    assert_eq!(argmax, nearest);
}

#[test]
fn mel_energy_scales_with_square_of_gain() {
    let an = MelAnalyzer::new(MelConfig::default()).unwrap();
    let w = synth_event_clip(EventClass::Chirp, 1.0, 3, SR).unwrap().0;
    let x = w.samples().unwrap();
    let a = 0.37;
    let scaled: Vec<f64> = x.iter().map(|v| v * a).collect();
    let (_, e1) = an.energies(x).unwrap();
    let (_, e2) = an.energies(&scaled).unwrap();
    let (s1, s2): (f64, f64) = (e1.iter().sum(), e2.iter().sum());
    assert!((s2 / s1 - a * a).abs() < 1e-10);
}

#[test]
fn hop_shift_moves_frames_by_one() {
    let cfg = MelConfig::default();
    let w = synth_event_clip(EventClass::Noise, 1.0, 5, SR).unwrap().0;
    let x = w.samples().unwrap();
    let shifted = Waveform::mono(SR, x[cfg.hop..].to_vec()).unwrap();
    let a = mel_spectrogram(&w, &cfg).unwrap();
    let b = mel_spectrogram(&shifted, &cfg).unwrap();
    // interior frames avoid the reflect-padded edges
    let margin = cfg.n_fft / cfg.hop;
    for t in margin..b.n_frames - margin {
        for (u, v) in b.frame(t).iter().zip(a.frame(t + 1)) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn short_waveform_is_input_error() {
    let r = mel_spectrogram(&Waveform::silence(SR, 100), &MelConfig::default());
    assert!(matches!(r, Err(foley_core::Error::Input(_))));
}

#[test]
fn griffin_lim_keeps_tone_frequency() {
    let cfg = MelConfig::default();
    let m = mel_spectrogram(&tone(1000.0, 0.5, 0.5), &cfg).unwrap();
    let w = griffin_lim_invert(&m, 16).unwrap();
    let x = w.samples().unwrap();
    // bins of the analysis FFT
    let n = cfg.n_fft;
    let start = (x.len() - n) / 2;
    let st = foley_dsp::stft::Stft::new(n, n).unwrap();
    let seg = &x[start..start + n];
    let spec = st.forward(seg).unwrap();
    let f = spec.frame(0);
    let peak = (0..f.len()).max_by(|&a, &b| f[a].norm().total_cmp(&f[b].norm())).unwrap();
    let expected = 1000.0 * n as f64 / SR as f64;
    assert!((peak as f64 - expected).abs() <= 1.0, "peak bin {peak}, expected {expected}");
}

#[test]
fn zero_spectrogram_inverts_to_silence() {
    let m = MelSpectrogram::silent(MelConfig::default(), 20);
    let w = griffin_lim_invert(&m, 4).unwrap();
    assert!(w.rms() < 1e-3);
}

#[test]
fn griffin_lim_round_trip_improves_with_iterations() {
    let cfg = MelConfig::default();
    let (w, _) = synth_event_clip(EventClass::Warble, 1.0, 11, SR).unwrap();
    let m = mel_spectrogram(&w, &cfg).unwrap();
    let an = MelAnalyzer::new(cfg).unwrap();
    let lsd: Vec<f64> = [1usize, 4, 16, 32]
        .iter()
        .map(|&it| mel_lsd(&m, &an.analyze(&griffin_lim(&an, &m, it).unwrap()).unwrap()))
        .collect();
    for p in lsd.windows(2) {
        assert!(p[1] <= p[0] + 1e-9, "{lsd:?}");
    }
    // desk-scale threshold for the round trip, in log10 units
    assert!(lsd[3] < 0.5, "{lsd:?}");
}

#[test]
fn click_train_has_four_onsets_per_second() {
    let (_, track) = synth_event_clip(EventClass::Clicks, 2.0, 1, SR).unwrap();
    assert_eq!(track.len(), 8);
    for (i, e) in track.events.iter().enumerate() {
        assert!((e.onset_s - i as f64 * 0.25).abs() < 1e-12);
    }
}

#[test]
fn synthesis_is_deterministic_and_bounded() {
    for c in EventClass::ALL {
        let (a, ta) = synth_event_clip(c, 1.3, 42, SR).unwrap();
        let (b, tb) = synth_event_clip(c, 1.3, 42, SR).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.peak() <= 1.0 && a.peak() > 0.05, "{c}: peak {}", a.peak());
        assert!(!ta.is_empty());
        assert!(ta.events.iter().all(|e| e.onset_s >= 0.0 && e.offset_s <= 1.3 + 1e-9 && e.class == c));
    }
    assert!(synth_event_clip(EventClass::Tone, 0.4, 0, SR).is_err());
    assert!(synth_event_clip(EventClass::Tone, 10.5, 0, SR).is_err());
}

#[test]
fn tone_is_less_flat_than_noise() {
    let t = synth_event_clip(EventClass::Tone, 1.0, 2, SR).unwrap().0;
    let n = synth_event_clip(EventClass::Noise, 1.0, 2, SR).unwrap().0;
    assert!(spectral_flatness(&t, 1024).unwrap() < spectral_flatness(&n, 1024).unwrap());
}

fn clip(kind: EventClass, secs: f64, seed: u64) -> Clip {
    let (wave, track) = synth_event_clip(kind, secs, seed, SR).unwrap();
    Clip { wave, track, caption: synth::caption_for(kind, seed) }
}

#[test]
fn single_clip_concat_is_identity() {
    let c = clip(EventClass::Bell, 1.0, 1);
    assert_eq!(temporal_augment_concat(&[c.clone()], ConcatRule::Sequential).unwrap(), c);
}

#[test]
fn second_clip_events_shift_by_first_duration() {
    let (a, b) = (clip(EventClass::Tone, 1.0, 1), clip(EventClass::Clicks, 1.0, 2));
    let out = temporal_augment_concat(&[a.clone(), b.clone()], ConcatRule::Sequential).unwrap();
    let tail = &out.track.events[a.track.len()..];
    for (e, o) in b.track.events.iter().zip(tail) {
        assert_eq!(o.onset_s, e.onset_s + 1.0);
    }
    assert_eq!(out.track.len(), a.track.len() + b.track.len());
    assert_eq!(out.caption, format!("{} then {}", a.caption, b.caption));
}

#[test]
fn gap_insert_adds_its_duration() {
    let (a, b) = (clip(EventClass::Tone, 1.0, 1), clip(EventClass::Noise, 1.5, 2));
    let out = temporal_augment_concat(&[a, b], ConcatRule::GapInsert { gap_s: 0.5 }).unwrap();
    assert!((out.wave.duration_s() - 3.0).abs() < 1e-12);
}

#[test]
fn concat_rejects_mixed_rates_and_overlong_output() {
    let a = clip(EventClass::Tone, 1.0, 1);
    let mut b = a.clone();
    b.wave = Waveform::mono(22_050, vec![0.0; 22_050]).unwrap();
    assert!(temporal_augment_concat(&[a.clone(), b], ConcatRule::Sequential).is_err());
    let long = clip(EventClass::Drone, 6.0, 1);
    assert!(temporal_augment_concat(&[long.clone(), long], ConcatRule::Sequential).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn wav_round_trip_within_quantisation(samples in prop::collection::vec(-1.0f64..=1.0, 1..400), stereo in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let chans = if stereo { vec![samples.clone(), samples.iter().map(|v| -v).collect()] } else { vec![samples] };
        let w = Waveform::new(16_000, chans).unwrap();
        wav_write(&path, &w).unwrap();
        let r = wav_read(&path).unwrap();
        prop_assert_eq!(r.n_channels(), w.n_channels());
        prop_assert_eq!(r.sample_rate, 16_000);
        for c in 0..w.n_channels() {
            for (a, b) in w.channel(c).iter().zip(r.channel(c)) {
                prop_assert!((a - b).abs() <= 2f64.powi(-15) + 1e-9);
            }
        }
    }

    #[test]
    fn concat_preserves_event_count(kinds in prop::collection::vec(0usize..9, 1..4), seed in 0u64..50) {
        let clips: Vec<Clip> = kinds.iter().map(|&k| clip(EventClass::ALL[k], 1.0, seed)).collect();
        let out = temporal_augment_concat(&clips, ConcatRule::GapInsert { gap_s: 0.25 }).unwrap();
        prop_assert_eq!(out.track.len(), clips.iter().map(|c| c.track.len()).sum::<usize>());
    }
}
