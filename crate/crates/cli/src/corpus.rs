//! Synthetic corpus generation and the dataset manifest.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use foley_core::{Error, Result, SeededRng};
use foley_dsp::synth::caption_for;
use foley_dsp::{
    synth_event_clip, temporal_augment_concat, wav_read, wav_write, Clip, ConcatRule, EventClass, EventTrack, Waveform,
    N_CLASSES,
};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.jsonl";
pub const MAX_DURATION_S: f64 = 10.0;

/// Which conditioning streams accompany the audio of a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalityMask {
    #[serde(rename = "video-text-audio")]
    VideoTextAudio,
    #[serde(rename = "text-audio")]
    TextAudio,
    #[serde(rename = "video-audio")]
    VideoAudio,
}

impl ModalityMask {
    /// Rows cycle through two full rows, one text-only and one video-only.
    pub fn for_row(i: usize) -> Self {
        match i % 4 {
            0 | 1 => Self::VideoTextAudio,
            2 => Self::TextAudio,
            _ => Self::VideoAudio,
        }
    }

    pub fn has_text(self) -> bool {
        self != Self::VideoAudio
    }

    pub fn has_vision(self) -> bool {
        self != Self::TextAudio
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub wav_path: PathBuf,
    pub event_track_path: PathBuf,
    pub caption: String,
    pub class: EventClass,
    pub duration_s: f64,
    pub modality_mask: ModalityMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory that relative row paths resolve against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// A loaded row.
#[derive(Clone, Debug)]
pub struct Item {
    pub row: ManifestRow,
    pub wave: Waveform,
    pub track: EventTrack,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.root.join(p)
        } else {
            p.to_path_buf()
        }
    }

    /// Reads a manifest, checking that every referenced file exists and every
    /// duration is at most 10 s.
    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut rows = Vec::new();
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ManifestRow = serde_json::from_str(&line)
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
            rows.push(row);
        }
        let m = Self { root, rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Input("manifest has no rows".into()));
        }
        for r in &self.rows {
            if !(r.duration_s > 0.0 && r.duration_s <= MAX_DURATION_S) {
                return Err(Error::Input(format!("{}: duration {} s outside (0, {MAX_DURATION_S}]", r.id, r.duration_s)));
            }
            for p in [&r.wav_path, &r.event_track_path] {
                if !self.resolve(p).is_file() {
                    return Err(Error::Input(format!("{}: missing file {}", r.id, p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.rows {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load_items(&self) -> Result<Vec<Item>> {
        self.rows
            .iter()
            .map(|r| {
                Ok(Item {
                    row: r.clone(),
                    wave: wav_read(&self.resolve(&r.wav_path))?,
                    track: EventTrack::read(&self.resolve(&r.event_track_path))?,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_clips: usize,
    /// Fraction of rows built by concatenating two single-event clips.
    pub multi_fraction: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub gap_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_clips: 100, multi_fraction: 0.5, min_s: 1.0, max_s: 2.0, gap_s: 0.1, sample_rate: 44_100, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clips == 0 {
            return Err(Error::Config("n_clips must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.multi_fraction) {
            return Err(Error::Config(format!("multi_fraction {} outside [0, 1]", self.multi_fraction)));
        }
        if !(0.5..=MAX_DURATION_S).contains(&self.min_s) || self.max_s < self.min_s {
            return Err(Error::Config("need 0.5 <= min_s <= max_s".into()));
        }
        if !(self.gap_s >= 0.0) || 2.0 * (self.max_s.max(1.0)) + self.gap_s > MAX_DURATION_S {
            return Err(Error::Config("gap_s must be >= 0 and multi-event clips must fit in 10 s".into()));
        }
        Ok(())
    }
}

/// Row `i` is multi-event exactly when `⌊(i+1)·f⌋ > ⌊i·f⌋`, so the first `n`
/// rows hold `⌊n·f⌋` of them.
pub fn is_multi(i: usize, fraction: f64) -> bool {
    ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor()
}

/// Distinct classes labelled on a track.
pub fn distinct_classes(track: &EventTrack) -> usize {
    track.events.iter().map(|e| e.class).collect::<BTreeSet<_>>().len()
}

fn clip_seed(seed: u64, i: usize, part: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((i as u64) << 4) ^ part
}

fn single(kind: EventClass, dur: f64, seed: u64, sr: u32) -> Result<Clip> {
    let (wave, track) = synth_event_clip(kind, dur, seed, sr)?;
    Ok(Clip { wave, track, caption: caption_for(kind, seed) })
}

/// Writes `wav/`, `tracks/` and the manifest under `out`. Classes cycle over
/// the rows; the second half of a multi-event row is a different class.
pub fn synth_corpus(cfg: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out.join("wav"))?;
    std::fs::create_dir_all(out.join("tracks"))?;
    let mut rng = SeededRng::derive(cfg.seed, 50);
    let mut rows = Vec::with_capacity(cfg.n_clips);
    for i in 0..cfg.n_clips {
        let kind = EventClass::ALL[i % N_CLASSES];
        let dur = cfg.min_s + (cfg.max_s - cfg.min_s) * rng.uniform();
        let clip = if is_multi(i, cfg.multi_fraction) {
            let other = EventClass::ALL[(i + 1 + rng.below(N_CLASSES - 1)) % N_CLASSES];
            let half = ((dur - cfg.gap_s) / 2.0).max(0.5);
            let a = single(kind, half, clip_seed(cfg.seed, i, 1), cfg.sample_rate)?;
            let b = single(other, half, clip_seed(cfg.seed, i, 2), cfg.sample_rate)?;
            temporal_augment_concat(&[a, b], ConcatRule::GapInsert { gap_s: cfg.gap_s })?
        } else {
            single(kind, dur, clip_seed(cfg.seed, i, 0), cfg.sample_rate)?
        };
        let id = format!("clip{i:05}");
        let wav_path = PathBuf::from("wav").join(format!("{id}.wav"));
        let event_track_path = PathBuf::from("tracks").join(format!("{id}.jsonl"));
        wav_write(&out.join(&wav_path), &clip.wave)?;
        clip.track.write(&out.join(&event_track_path))?;
        rows.push(ManifestRow {
            id,
            wav_path,
            event_track_path,
            caption: clip.caption,
            class: kind,
            duration_s: clip.wave.duration_s(),
            modality_mask: ModalityMask::for_row(i),
        });
    }
    let m = DatasetManifest { root: out.to_path_buf(), rows };
    m.write(&out.join(MANIFEST))?;
    Ok(m)
}
