//! Multi-event clips built by concatenating single-event clips in time.

use foley_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::synth::EventTrack;
use crate::wav::Waveform;

pub const MAX_CLIP_S: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub wave: Waveform,
    pub track: EventTrack,
    pub caption: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ConcatRule {
    /// Clips back to back.
    Sequential,
    /// `gap_s` seconds of silence between consecutive clips.
    GapInsert { gap_s: f64 },
}

/// Joins mono clips in order. Event times are shifted by each clip's start and
/// captions are joined with "then".
pub fn temporal_augment_concat(clips: &[Clip], rule: ConcatRule) -> Result<Clip> {
    let first = clips.first().ok_or_else(|| Error::Input("no clips to concatenate".into()))?;
    let sr = first.wave.sample_rate;
    if clips.iter().any(|c| c.wave.sample_rate != sr) {
        return Err(Error::Input("clips have different sample rates".into()));
    }
    let gap = match rule {
        ConcatRule::Sequential => 0,
        ConcatRule::GapInsert { gap_s } if gap_s >= 0.0 => (gap_s * sr as f64).round() as usize,
        ConcatRule::GapInsert { gap_s } => return Err(Error::Input(format!("negative gap {gap_s}"))),
    };
    let total: usize = clips.iter().map(|c| c.wave.len()).sum::<usize>() + gap * (clips.len() - 1);
    if total as f64 / sr as f64 > MAX_CLIP_S + 1e-9 {
        return Err(Error::Input(format!("concatenation lasts {:.3} s, limit {MAX_CLIP_S}", total as f64 / sr as f64)));
    }
    let mut samples = Vec::with_capacity(total);
    let mut events = Vec::new();
    let mut captions = Vec::with_capacity(clips.len());
    for (i, c) in clips.iter().enumerate() {
        if i > 0 {
            samples.resize(samples.len() + gap, 0.0);
        }
        let offset = samples.len() as f64 / sr as f64;
        samples.extend_from_slice(c.wave.samples()?);
        events.extend(c.track.shifted(offset).events);
        captions.push(c.caption.as_str());
    }
    Ok(Clip {
        wave: Waveform::mono(sr, samples)?,
        track: EventTrack { events },
        caption: captions.join(" then "),
    })
}
