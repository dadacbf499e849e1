//! Procedural single-event clips in nine classes, with their event tracks and
//! short captions.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use foley_core::{Error, Result, SeededRng};
use serde::{Deserialize, Serialize};

use crate::wav::Waveform;

pub const N_CLASSES: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Tone,
    Noise,
    Chirp,
    Clicks,
    Drone,
    Warble,
    Bell,
    Rumble,
    Thump,
}

impl EventClass {
    pub const ALL: [EventClass; N_CLASSES] = [
        EventClass::Tone,
        EventClass::Noise,
        EventClass::Chirp,
        EventClass::Clicks,
        EventClass::Drone,
        EventClass::Warble,
        EventClass::Bell,
        EventClass::Rumble,
        EventClass::Thump,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Input(format!("class index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            EventClass::Tone => "tone",
            EventClass::Noise => "noise",
            EventClass::Chirp => "chirp",
            EventClass::Clicks => "clicks",
            EventClass::Drone => "drone",
            EventClass::Warble => "warble",
            EventClass::Bell => "bell",
            EventClass::Rumble => "rumble",
            EventClass::Thump => "thump",
        }
    }

    fn caption_words(self) -> [&'static str; 2] {
        match self {
            EventClass::Tone => ["steady beep", "pure tone"],
            EventClass::Noise => ["hissing static", "white noise"],
            EventClass::Chirp => ["rising sweep", "bird chirp"],
            EventClass::Clicks => ["ticking clock", "rapid clicks"],
            EventClass::Drone => ["pulsing hum", "engine drone"],
            EventClass::Warble => ["wobbling siren", "warbling whistle"],
            EventClass::Bell => ["ringing bell", "metal chime"],
            EventClass::Rumble => ["distant thunder", "low rumble"],
            EventClass::Thump => ["heavy footsteps", "door knocks"],
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown event class '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset_s: f64,
    pub offset_s: f64,
    pub class: EventClass,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventTrack {
    pub events: Vec<Event>,
}

impl EventTrack {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn shifted(&self, by_s: f64) -> Self {
        Self {
            events: self
                .events
                .iter()
                .map(|e| Event { onset_s: e.onset_s + by_s, offset_s: e.offset_s + by_s, class: e.class })
                .collect(),
        }
    }

    /// Most frequent class, ties broken by first occurrence.
    pub fn dominant_class(&self) -> Option<EventClass> {
        let mut counts = [0usize; N_CLASSES];
        for e in &self.events {
            counts[e.class.index()] += 1;
        }
        let first = |c: usize| self.events.iter().position(|e| e.class.index() == c).unwrap_or(usize::MAX);
        (0..N_CLASSES)
            .filter(|&c| counts[c] > 0)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(first(b).cmp(&first(a))))
            .map(|c| EventClass::ALL[c])
    }

    /// Per-frame features `[n_frames, 2·N_CLASSES]`: class activity, then a
    /// one-frame onset marker per class. Frame `i` covers `[i, i+1)/rate` seconds.
    pub fn raster(&self, frame_rate: f64, n_frames: usize) -> Vec<f64> {
        let w = 2 * N_CLASSES;
        let mut out = vec![0.0; n_frames * w];
        for e in &self.events {
            let c = e.class.index();
            for i in 0..n_frames {
                let (a, b) = (i as f64 / frame_rate, (i + 1) as f64 / frame_rate);
                if e.onset_s < b && e.offset_s > a {
                    out[i * w + c] = 1.0;
                }
                if e.onset_s >= a && e.onset_s < b {
                    out[i * w + N_CLASSES + c] = 1.0;
                }
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| Error::Input(format!("event track: {e}")))?);
        }
        Ok(Self { events })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(std::io::BufReader::new(f))
    }
}

/// Every word that can appear in a generated caption, in a fixed order.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = vec!["then"];
    for c in EventClass::ALL {
        for phrase in c.caption_words() {
            for w in phrase.split(' ') {
                if !v.contains(&w) {
                    v.push(w);
                }
            }
        }
    }
    v
}

pub fn caption_for(kind: EventClass, seed: u64) -> String {
    kind.caption_words()[(seed % 2) as usize].to_string()
}

pub const CLICK_RATE_HZ: f64 = 4.0;
const CLICK_LEN_S: f64 = 0.005;
const THUMP_PERIOD_S: f64 = 0.5;
const PEAK: f64 = 0.5;

fn fade(t: f64, start: f64, end: f64) -> f64 {
    let ramp = 0.005;
    ((t - start) / ramp).clamp(0.0, 1.0) * ((end - t) / ramp).clamp(0.0, 1.0)
}

/// A deterministic clip of `kind` lasting `duration_s` seconds.
pub fn synth_event_clip(
    kind: EventClass,
    duration_s: f64,
    seed: u64,
    sample_rate: u32,
) -> Result<(Waveform, EventTrack)> {
    if !(0.5..=10.0).contains(&duration_s) {
        return Err(Error::Input(format!("duration {duration_s} s outside [0.5, 10]")));
    }
    let mut rng = SeededRng::derive(seed, kind.index() as u64 + 1);
    let sr = sample_rate as f64;
    let n = (duration_s * sr).round() as usize;
    let d = n as f64 / sr;
    let mut x = vec![0.0; n];
    let mut events = Vec::new();
    let span = |rng: &mut SeededRng| {
        let on = d * (0.05 + 0.2 * rng.uniform());
        let off = d * (0.75 + 0.2 * rng.uniform());
        (on, off)
    };
    let t_of = |i: usize| i as f64 / sr;
    match kind {
        EventClass::Tone => {
            let (on, off) = span(&mut rng);
            let f = 300.0 + 900.0 * rng.uniform();
            for (i, v) in x.iter_mut().enumerate() {
                let t = t_of(i);
                *v = PEAK * fade(t, on, off) * (2.0 * PI * f * t).sin();
            }
            events.push((on, off));
        }
        EventClass::Noise => {
            let (on, off) = span(&mut rng);
            for (i, v) in x.iter_mut().enumerate() {
                let t = t_of(i);
                *v = (0.25 * rng.normal()).clamp(-PEAK, PEAK) * fade(t, on, off);
            }
            events.push((on, off));
        }
        EventClass::Chirp => {
            let (on, off) = span(&mut rng);
            let f0 = 200.0 + 300.0 * rng.uniform();
            let f1 = 2000.0 + 3000.0 * rng.uniform();
            let k = (f1 - f0) / (off - on);
            for (i, v) in x.iter_mut().enumerate() {
                let t = t_of(i);
                let tau = (t - on).max(0.0);
                *v = PEAK * fade(t, on, off) * (2.0 * PI * (f0 * tau + 0.5 * k * tau * tau)).sin();
            }
            events.push((on, off));
        }
        EventClass::Clicks => {
            let count = (d * CLICK_RATE_HZ - 1e-9).ceil() as usize;
            for c in 0..count {
                let on = c as f64 / CLICK_RATE_HZ;
                let start = (on * sr).round() as usize;
                let len = (CLICK_LEN_S * sr).round() as usize;
                for j in 0..len.min(n.saturating_sub(start)) {
                    let decay = (-(j as f64) / (len as f64 / 4.0)).exp();
                    x[start + j] = (PEAK * decay * (0.7 * rng.normal()).clamp(-1.0, 1.0)).clamp(-PEAK, PEAK);
                }
                events.push((on, (on + CLICK_LEN_S).min(d)));
            }
        }
        EventClass::Drone => {
            let f = 100.0 + 200.0 * rng.uniform();
            let fm = 2.0 + 4.0 * rng.uniform();
            for (i, v) in x.iter_mut().enumerate() {
                let t = t_of(i);
                let am = 0.5 * (1.0 + 0.8 * (2.0 * PI * fm * t).sin()) / 0.9;
                *v = PEAK * fade(t, 0.0, d) * am * (2.0 * PI * f * t).sin();
            }
            events.push((0.0, d));
        }
        EventClass::Warble => {
            let (on, off) = span(&mut rng);
            let fc = 500.0 + 1000.0 * rng.uniform();
            let rate = 5.0 + 3.0 * rng.uniform();
            let depth = 0.1 * fc;
            for (i, v) in x.iter_mut().enumerate() {
                let t = t_of(i);
                let phase = 2.0 * PI * fc * t - depth / rate * (2.0 * PI * rate * t).cos();
                *v = PEAK * fade(t, on, off) * phase.sin();
            }
            events.push((on, off));
        }
        EventClass::Bell => {
            let on = d * (0.05 + 0.2 * rng.uniform());
            let off = (on + 0.6).min(d);
            let f0 = 400.0 + 500.0 * rng.uniform();
            let partials = [(1.0, 1.0), (2.76, 0.5), (5.4, 0.25)];
            for (i, v) in x.iter_mut().enumerate() {
                let t = t_of(i);
                if t < on {
                    continue;
                }
                let tau = t - on;
                let s: f64 = partials.iter().map(|(r, a)| a * (2.0 * PI * f0 * r * tau).sin()).sum();
                *v = PEAK / 1.75 * fade(t, on, d) * (-tau / 0.25).exp() * s;
            }
            events.push((on, off));
        }
        EventClass::Rumble => {
            let (on, off) = span(&mut rng);
            let cutoff = 80.0 + 120.0 * rng.uniform();
            let a = (-2.0 * PI * cutoff / sr).exp();
            let mut y = 0.0;
            for (i, v) in x.iter_mut().enumerate() {
                let t = t_of(i);
                y = a * y + (1.0 - a) * rng.normal();
                *v = (6.0 * y).clamp(-1.0, 1.0) * PEAK * fade(t, on, off);
            }
            events.push((on, off));
        }
        EventClass::Thump => {
            let f = 60.0 + 60.0 * rng.uniform();
            let count = ((d - 0.1) / THUMP_PERIOD_S).ceil().max(1.0) as usize;
            for c in 0..count {
                let on = 0.1 + c as f64 * THUMP_PERIOD_S;
                if on >= d {
                    break;
                }
                let start = (on * sr).round() as usize;
                for (j, v) in x[start..].iter_mut().enumerate() {
                    let tau = j as f64 / sr;
                    if tau > 0.2 {
                        break;
                    }
                    *v += PEAK * (-tau / 0.05).exp() * (2.0 * PI * f * tau).sin();
                }
                events.push((on, (on + 0.2).min(d)));
            }
        }
    }
    let track = EventTrack {
        events: events.into_iter().map(|(onset_s, offset_s)| Event { onset_s, offset_s, class: kind }).collect(),
    };
    Ok((Waveform::clipped(sample_rate, vec![x])?, track))
}

/// Geometric over arithmetic mean of the power spectrum, averaged over frames.
pub fn spectral_flatness(w: &Waveform, n_fft: usize) -> Result<f64> {
    let st = crate::stft::Stft::new(n_fft, n_fft / 2)?;
    let spec = st.forward(w.samples()?)?;
    let power = spec.power();
    let mut acc = 0.0;
    for t in 0..spec.n_frames {
        let p = &power[t * spec.n_bins..(t + 1) * spec.n_bins];
        let geo = (p.iter().map(|v| (v + 1e-12).ln()).sum::<f64>() / p.len() as f64).exp();
        let ari = p.iter().sum::<f64>() / p.len() as f64 + 1e-12;
        acc += geo / ari;
    }
    Ok(acc / spec.n_frames as f64)
}
