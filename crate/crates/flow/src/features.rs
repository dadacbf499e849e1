//! Externally computed feature files that replace the toy encoders' inputs.
//!
//! Layout: one line of JSON `{"kind", "frame_rate", "dim", "length"}`
//! terminated by `\n`, followed by `length × dim` little-endian `f32`
//! values in row-major order.

use std::io::Write;
use std::path::Path;

use foley_core::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::conditioning::ModalityKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub kind: String,
    pub frame_rate: f64,
    pub dim: usize,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub kind: ModalityKind,
    pub frame_rate: f64,
    /// `[length, dim]`
    pub data: Tensor<f64>,
}

impl FeatureFile {
    pub fn new(kind: ModalityKind, frame_rate: f64, data: Tensor<f64>) -> Result<Self> {
        data.dims2()?;
        if !(frame_rate > 0.0) {
            return Err(Error::Input(format!("feature frame rate must be positive, got {frame_rate}")));
        }
        Ok(Self { kind, frame_rate, data })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (length, dim) = self.data.dims2()?;
        let h = FeatureHeader { kind: self.kind.to_string(), frame_rate: self.frame_rate, dim, length };
        let mut out = serde_json::to_vec(&h)?;
        out.push(b'\n');
        for v in self.data.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Input("feature file has no header line".into()))?;
        let h: FeatureHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Input(format!("feature header: {e}")))?;
        let kind: ModalityKind = h.kind.parse()?;
        let body = &bytes[nl + 1..];
        if body.len() != h.length * h.dim * 4 {
            return Err(Error::Input(format!(
                "feature body has {} bytes, header promises {}×{} f32",
                body.len(),
                h.length,
                h.dim
            )));
        }
        let vals: Vec<f64> =
            body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Self::new(kind, h.frame_rate, Tensor::new(&[h.length, h.dim], vals)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// The matrix, after checking kind, rate and width against what the model expects.
    pub fn expect(&self, kind: ModalityKind, frame_rate: f64, dim: usize) -> Result<&Tensor<f64>> {
        if self.kind != kind {
            return Err(Error::Input(format!("expected {kind} features, file holds {}", self.kind)));
        }
        if (self.frame_rate - frame_rate).abs() > 1e-9 {
            return Err(Error::Input(format!("{kind} features at {} fps, model expects {frame_rate}", self.frame_rate)));
        }
        if self.data.dim(1) != dim {
            return Err(Error::Input(format!("{kind} features have width {}, model expects {dim}", self.data.dim(1))));
        }
        Ok(&self.data)
    }
}
