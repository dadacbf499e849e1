use std::path::Path;
use std::process::{Command, Output};

use foley_cli::corpus::distinct_classes;
use foley_cli::{exit_code, DatasetManifest, ModalityMask, Settings, SynthConfig};
use foley_core::Error;

fn foley(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foley")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_data_writes_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = foley(&["synth-data", "--out", s(dir.path()), "--n-clips", "10", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["rows"], 10);
    assert_eq!(summary["multi_event"], 5);

    let m = DatasetManifest::read(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(m.rows.len(), 10);
    let items = m.load_items().unwrap();
    let multi = items.iter().filter(|it| distinct_classes(&it.track) > 1).count();
    assert_eq!(multi, 5);
    for (i, it) in items.iter().enumerate() {
        assert!(it.row.duration_s <= 10.0);
        assert_eq!(it.row.modality_mask, ModalityMask::for_row(i));
        assert_eq!(it.track.events[0].class, it.row.class);
        assert!(!it.row.caption.is_empty());
    }
}

#[test]
fn synth_data_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(foley(&["synth-data", "--out", s(d.path()), "--n-clips", "4", "--seed", "11"]).status.success());
    }
    for rel in ["manifest.jsonl", "wav/clip00000.wav", "wav/clip00003.wav", "tracks/clip00001.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn modality_mask_strings() {
    let enc = |m| serde_json::to_string(&m).unwrap();
    assert_eq!(enc(ModalityMask::VideoTextAudio), "\"video-text-audio\"");
    assert_eq!(enc(ModalityMask::TextAudio), "\"text-audio\"");
    assert_eq!(enc(ModalityMask::VideoAudio), "\"video-audio\"");
}

#[test]
fn config_sections_override_defaults() {
    let st = Settings::parse("synth.n_clips = 7\nsynth.gap_s = 0.25\n").unwrap();
    let cfg: SynthConfig = st.section("synth").unwrap();
    assert_eq!(cfg.n_clips, 7);
    assert_eq!(cfg.gap_s, 0.25);
    assert_eq!(cfg.seed, SynthConfig::default().seed);
    assert!(matches!(Settings::parse("nosuch.key = 1"), Err(Error::Config(_))));
    let st = Settings::parse("synth.n_clipz = 7").unwrap();
    assert!(matches!(st.section::<SynthConfig>("synth"), Err(Error::Config(_))));
}

#[test]
fn exit_codes() {
    assert_eq!(exit_code(&Error::Input("x".into())), 2);
    assert_eq!(exit_code(&Error::Config("x".into())), 3);
    assert_eq!(exit_code(&Error::Numeric("x".into())), 4);
    assert_eq!(exit_code(&Error::Internal("x".into())), 1);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let out = foley(&["train-codec", "--manifest", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("foley: "));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "synth.multi_fraction = 2.0\n").unwrap();
    let out = foley(&["--config", s(&cfg), "synth-data", "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn manifest_rejects_long_rows_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(foley(&["synth-data", "--out", s(dir.path()), "--n-clips", "2"]).status.success());
    let path = dir.path().join("manifest.jsonl");
    let mut m = DatasetManifest::read(&path).unwrap();
    m.rows[1].duration_s = 10.5;
    assert!(matches!(m.validate(), Err(Error::Input(_))));
    m.rows[1].duration_s = 1.0;
    m.rows[0].wav_path = "wav/gone.wav".into();
    assert!(matches!(m.validate(), Err(Error::Input(_))));
}
