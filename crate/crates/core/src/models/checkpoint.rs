use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::Model;
use super::spec::{hex, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::{ParamKind, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEGKITCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

/// One named parameter buffer, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub kind: ParamKind,
    pub values: Vec<f32>,
}

/// Serialized model: spec, provenance and every parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub epoch: usize,
    pub params: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: ModelSpec,
    spec_fingerprint: String,
    seed: u64,
    epoch: usize,
    dtype: String,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    kind: ParamKind,
    len: usize,
}

impl Checkpoint {
    /// Layout: magic, version (u32 LE), header length (u64 LE), JSON header,
    /// little-endian f32 payload, SHA-256 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            spec_fingerprint: self.spec.fingerprint(),
            seed: self.seed,
            epoch: self.epoch,
            dtype: "f32".into(),
            params: self
                .params
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    kind: p.kind,
                    len: p.values.len(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&f32::to_le_bytes_vec(&p.values));
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX_LEN + DIGEST_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let actual = Sha256::digest(body);
        if actual.as_slice() != digest {
            return Err(Error::Integrity(format!(
                "checksum mismatch (stored {}, computed {})",
                hex(digest),
                hex(&actual)
            )));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let header_end = PREFIX_LEN
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Integrity("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[PREFIX_LEN..header_end])
            .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
        if header.spec.fingerprint() != header.spec_fingerprint {
            return Err(Error::Integrity("spec fingerprint mismatch".into()));
        }
        if header.dtype != "f32" {
            return Err(Error::Compatibility(format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &body[header_end..];
        let expected: usize = header.params.iter().map(|p| p.len * 4).sum();
        if payload.len() != expected {
            return Err(Error::Integrity(format!(
                "payload has {} bytes, header declares {expected}",
                payload.len()
            )));
        }
        let mut offset = 0;
        let params = header
            .params
            .into_iter()
            .map(|p| {
                let values = f32::from_le_bytes_slice(&payload[offset..offset + p.len * 4]);
                offset += p.len * 4;
                NamedArray {
                    name: p.name,
                    kind: p.kind,
                    values,
                }
            })
            .collect();
        Ok(Self {
            spec: header.spec,
            seed: header.seed,
            epoch: header.epoch,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl<T: Scalar> Model<T> {
    pub fn to_checkpoint(&mut self, seed: u64, epoch: usize) -> Checkpoint {
        let params = self
            .network_mut()
            .params_mut()
            .into_iter()
            .map(|p| NamedArray {
                name: p.name,
                kind: p.kind,
                values: p.values.iter().map(|v| v.to_f64_lossy() as f32).collect(),
            })
            .collect();
        Checkpoint {
            spec: self.spec().clone(),
            seed,
            epoch,
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::<T>::new(ckpt.spec.clone(), ckpt.seed)?;
        {
            let mut slots = model.network_mut().params_mut();
            if slots.len() != ckpt.params.len() {
                return Err(Error::Compatibility(format!(
                    "{} parameter buffers for a model with {}",
                    ckpt.params.len(),
                    slots.len()
                )));
            }
            for (slot, stored) in slots.iter_mut().zip(&ckpt.params) {
                if slot.name != stored.name || slot.kind != stored.kind || slot.values.len() != stored.values.len() {
                    return Err(Error::Compatibility(format!(
                        "parameter {} ({:?}, {} values) does not fit slot {} ({:?}, {} values)",
                        stored.name,
                        stored.kind,
                        stored.values.len(),
                        slot.name,
                        slot.kind,
                        slot.values.len()
                    )));
                }
                for (dst, &src) in slot.values.iter_mut().zip(&stored.values) {
                    *dst = T::from_f64_lossy(src as f64);
                }
            }
        }
        Ok(Model::from_parts(ckpt.spec.clone(), model.network().clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_unet;
    use crate::nn::Tensor;

    fn small() -> Model<f32> {
        Model::new(build_unet(5, 1, 2).unwrap().with_input(4, 4).unwrap(), 9).unwrap()
    }

    #[test]
    fn roundtrip_preserves_outputs() {
        let mut model = small();
        let ckpt = model.to_checkpoint(9, 3);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        let mut restored = Model::<f32>::from_checkpoint(&back).unwrap();
        let x = Tensor::from_vec([1, 3, 4, 4], (0..48).map(|i| i as f32 / 48.0).collect());
        assert_eq!(model.infer(x.clone()).unwrap(), restored.infer(x).unwrap());
        // encoding is stable
        assert_eq!(restored.to_checkpoint(9, 3).to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = small().to_checkpoint(9, 0).to_bytes();
        for pos in [3, 30, bytes.len() - 40, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(
                matches!(Checkpoint::from_bytes(&bad), Err(Error::Integrity(_))),
                "byte {pos}"
            );
        }
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 5]),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn mismatched_parameters_are_incompatible() {
        let mut ckpt = small().to_checkpoint(9, 0);
        ckpt.params[0].values.pop();
        assert!(matches!(
            Model::<f32>::from_checkpoint(&ckpt),
            Err(Error::Compatibility(_))
        ));
    }
}
