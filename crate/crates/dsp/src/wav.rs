//! 16-bit PCM WAV files and the in-memory waveform type.

use std::path::Path;

use foley_core::{Error, Result};

/// Planar audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

const CLIP_TOL: f64 = 1e-6;

impl Waveform {
    /// Fails if channels differ in length or any sample exceeds 1 in magnitude.
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::Input(format!("{} channels; expected 1 or 2", channels.len())));
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(Error::Input("channels differ in length".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if let Some(v) = channels.iter().flatten().find(|v| !(v.abs() <= 1.0 + CLIP_TOL)) {
            return Err(Error::Input(format!("sample {v} outside [-1, 1]")));
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    /// Hard-limits to `[-1, 1]` (NaN becomes 0) before constructing.
    pub fn clipped(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        let channels = channels
            .into_iter()
            .map(|c| c.into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }).collect())
            .collect();
        Self::new(sample_rate, channels)
    }

    pub fn silence(sample_rate: u32, len: usize) -> Self {
        Self { sample_rate, channels: vec![vec![0.0; len]] }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    /// The single channel of a mono waveform; input error for stereo.
    pub fn samples(&self) -> Result<&[f64]> {
        if self.channels.len() != 1 {
            return Err(Error::Input("expected a mono waveform".into()));
        }
        Ok(&self.channels[0])
    }

    pub fn rms(&self) -> f64 {
        let n = (self.len() * self.n_channels()).max(1) as f64;
        (self.channels.iter().flatten().map(|v| v * v).sum::<f64>() / n).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn quantize(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn wav_write(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: w.n_channels() as u16,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut wr = hound::WavWriter::create(path, spec).map_err(io)?;
    for i in 0..w.len() {
        for c in &w.channels {
            wr.write_sample(quantize(c[i])).map_err(io)?;
        }
    }
    wr.finalize().map_err(io)
}

pub fn wav_read(path: &Path) -> Result<Waveform> {
    let io = |e: hound::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut rd = hound::WavReader::open(path).map_err(io)?;
    let spec = rd.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Input(format!("{}: only 16-bit PCM is supported", path.display())));
    }
    let nc = spec.channels as usize;
    let mut channels = vec![Vec::new(); nc];
    for (i, s) in rd.samples::<i16>().enumerate() {
        channels[i % nc].push(s.map_err(io)? as f64 / 32768.0);
    }
    Waveform::new(spec.sample_rate, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(Waveform::mono(8000, vec![0.0, 1.5]).is_err());
        assert!(Waveform::mono(8000, vec![f64::NAN]).is_err());
        assert!(Waveform::mono(8000, vec![1.0 + 1e-7]).is_ok());
    }

    #[test]
    fn quantization_clamps_full_scale() {
        assert_eq!(quantize(1.0), 32767);
        assert_eq!(quantize(-1.0), -32768);
        assert_eq!(quantize(0.0), 0);
    }
}
