//! Checkpoint files: `FLYCKPT1`, a little-endian `u64` header length, a JSON
//! header, then a blob of little-endian `f32` values.
//!
//! The header records every tensor's name, shape and offset into the blob
//! together with the blob's SHA-256, so a truncated or edited file is
//! rejected before any state is restored. Files are written to a sibling
//! temporary path and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::AdamW;
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FLYCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    step: u64,
    config: serde_json::Value,
    rng: Option<RngState>,
    extra: serde_json::Value,
    tensors: Vec<TensorMeta>,
    blob_len: usize,
    blob_sha256: String,
}

/// In-memory checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub step: u64,
    pub config: serde_json::Value,
    pub rng: Option<RngState>,
    pub extra: serde_json::Value,
    tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(kind: &str, step: u64, config: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            step,
            config,
            rng: None,
            extra: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn put_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        let data = t.data().iter().map(|v| v.as_f64() as f32).collect();
        self.tensors.push((name.to_string(), t.shape().to_vec(), data));
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let (_, shape, data) = self
            .tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| integrity(format!("checkpoint has no tensor {name}")))?;
        Tensor::new(shape, data.iter().map(|&v| T::c(v as f64)).collect())
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _, _)| n.as_str())
    }

    /// Stores every parameter under `prefix/name`.
    pub fn put_params<T: Scalar>(&mut self, prefix: &str, ps: &ParamStore<T>) {
        for id in ps.ids() {
            self.put_tensor(&format!("{prefix}/{}", ps.name(id)), ps.value(id));
        }
    }

    /// Overwrites `ps` from tensors stored under `prefix`; names and shapes must match.
    pub fn load_params<T: Scalar>(&self, prefix: &str, ps: &mut ParamStore<T>) -> Result<()> {
        let mut staged = Vec::with_capacity(ps.len());
        for id in ps.ids() {
            let t = self.tensor::<T>(&format!("{prefix}/{}", ps.name(id)))?;
            if t.shape() != ps.value(id).shape() {
                return Err(integrity(format!(
                    "shape of {} is {:?}, model expects {:?}",
                    ps.name(id),
                    t.shape(),
                    ps.value(id).shape()
                )));
            }
            staged.push((id, t));
        }
        for (id, t) in staged {
            ps.set(id, t)?;
        }
        Ok(())
    }

    pub fn put_adam<T: Scalar>(&mut self, prefix: &str, ps: &ParamStore<T>, opt: &AdamW<T>) {
        for id in ps.ids() {
            self.put_tensor(&format!("{prefix}/m/{}", ps.name(id)), &opt.m[id.0]);
            self.put_tensor(&format!("{prefix}/v/{}", ps.name(id)), &opt.v[id.0]);
        }
        let t = Tensor::<f64>::scalar(opt.t as f64);
        self.put_tensor(&format!("{prefix}/t"), &t);
    }

    pub fn load_adam<T: Scalar>(&self, prefix: &str, ps: &ParamStore<T>, opt: &mut AdamW<T>) -> Result<()> {
        let mut m = Vec::with_capacity(ps.len());
        let mut v = Vec::with_capacity(ps.len());
        for id in ps.ids() {
            m.push(self.tensor(&format!("{prefix}/m/{}", ps.name(id)))?);
            v.push(self.tensor(&format!("{prefix}/v/{}", ps.name(id)))?);
        }
        let t = self.tensor::<f64>(&format!("{prefix}/t"))?.item()?;
        opt.m = m;
        opt.v = v;
        opt.t = t as u64;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut metas = Vec::with_capacity(self.tensors.len());
        for (name, shape, data) in &self.tensors {
            metas.push(TensorMeta { name: name.clone(), shape: shape.clone(), offset: blob.len() / 4 });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            step: self.step,
            config: self.config.clone(),
            rng: self.rng.clone(),
            extra: self.extra.clone(),
            tensors: metas,
            blob_len: blob.len(),
            blob_sha256: sha_hex(&blob),
        };
        let hj = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + hj.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hj.len() as u64).to_le_bytes());
        out.extend_from_slice(&hj);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(integrity("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(integrity("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| integrity(format!("bad header: {e}")))?;
        let blob = &body[hlen..];
        if blob.len() != header.blob_len {
            return Err(integrity(format!("blob is {} bytes, header says {}", blob.len(), header.blob_len)));
        }
        if sha_hex(blob) != header.blob_sha256 {
            return Err(integrity("blob checksum mismatch"));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for m in header.tensors {
            let n: usize = m.shape.iter().product();
            let (start, end) = (m.offset * 4, (m.offset + n) * 4);
            if end > blob.len() {
                return Err(integrity(format!("tensor {} runs past the blob", m.name)));
            }
            let data = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((m.name, m.shape, data));
        }
        Ok(Self {
            kind: header.kind,
            step: header.step,
            config: header.config,
            rng: header.rng,
            extra: header.extra,
            tensors,
        })
    }

    /// Writes atomically: a partially written file never replaces `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp-write");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn sample() -> Checkpoint {
        let mut rng = SeededRng::new(9);
        let mut c = Checkpoint::new("test", 12, serde_json::json!({"a": 1, "b": [1.5, 2.0]}));
        c.put_tensor("x", &Tensor::<f32>::randn(&[3, 4], &mut rng));
        c.put_tensor("y", &Tensor::<f32>::scalar(2.5));
        c.rng = Some(rng.state());
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in (0..bytes.len()).step_by(7) {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))));
        }
    }

    #[test]
    fn flipped_blob_byte_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
    }
}
