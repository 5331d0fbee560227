//! `WSCK` v1 checkpoints.
//!
//! ```text
//! magic "WSCK" | version u8 = 1 | header_len u32 | header JSON (UTF-8)
//! | each tensor's f32 LE values in manifest order
//! ```
//!
//! The JSON header carries the architecture, seed, epoch, the ordered tensor
//! manifest (name + shape), a config hash, and the loss mode. Unknown header
//! keys are tolerated and reported.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milmodels::MilModelSpec;
use crate::numcore::Tensor;
use crate::representation::Activation;

const MAGIC: &[u8; 4] = b"WSCK";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Contrastive {
        encoder_widths: Vec<usize>,
        encoder_activation: Activation,
        projection_widths: Vec<usize>,
    },
    Mil {
        spec: MilModelSpec,
    },
}

impl Architecture {
    pub fn kind(&self) -> &'static str {
        match self {
            Architecture::Contrastive { .. } => "contrastive",
            Architecture::Mil { .. } => "mil",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub seed: u64,
    pub epoch: u32,
    pub tensors: Vec<TensorEntry>,
    pub config_hash: String,
    pub loss_mode: Option<String>,
}

const HEADER_KEYS: [&str; 6] = ["architecture", "seed", "epoch", "tensors", "config_hash", "loss_mode"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
    /// Header keys this reader did not recognize (populated on load).
    pub unknown_header_keys: Vec<String>,
}

impl Checkpoint {
    pub fn new(
        architecture: Architecture,
        seed: u64,
        epoch: u32,
        config_hash: String,
        loss_mode: Option<String>,
        named: Vec<(String, Tensor)>,
    ) -> Self {
        let (entries, tensors) = named
            .into_iter()
            .map(|(name, t)| {
                (
                    TensorEntry {
                        name,
                        shape: t.shape().to_vec(),
                    },
                    t,
                )
            })
            .unzip();
        Checkpoint {
            header: CheckpointHeader {
                architecture,
                seed,
                epoch,
                tensors: entries,
                config_hash,
                loss_mode,
            },
            tensors,
            unknown_header_keys: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::ArchitectureMismatch(format!("checkpoint has no tensor {name:?}")))
    }

    /// Parameters rounded through f32, as they will read back from disk.
    pub fn quantized(&self) -> Checkpoint {
        let mut c = self.clone();
        for t in &mut c.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        c
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header).map_err(|e| Error::Format {
            offset: 9,
            detail: format!("header serialization failed: {e}"),
        })?;
        let mut out = Vec::with_capacity(9 + json.len() + 4 * self.tensors.iter().map(Tensor::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (entry, t) in self.header.tensors.iter().zip(&self.tensors) {
            if entry.shape != t.shape() {
                return Err(Error::Format {
                    offset: out.len() as u64,
                    detail: format!("tensor {} shape {:?} disagrees with manifest {:?}", entry.name, t.shape(), entry.shape),
                });
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
        if buf.len() < 4 || &buf[..4] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {:?}, expected \"WSCK\"", &buf[..buf.len().min(4)]),
            });
        }
        if buf.len() < 9 {
            return Err(Error::Format {
                offset: 4,
                detail: format!("truncated header: expected 9 bytes, found {}", buf.len()),
            });
        }
        if buf[4] != VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported version {}", buf[4]),
            });
        }
        let len = u32::from_le_bytes([buf[5], buf[6], buf[7], buf[8]]) as usize;
        let json_end = 9 + len;
        if buf.len() < json_end {
            return Err(Error::Format {
                offset: 9,
                detail: format!("truncated header JSON: expected {len} bytes, found {}", buf.len() - 9),
            });
        }
        let value: serde_json::Value = serde_json::from_slice(&buf[9..json_end]).map_err(|e| Error::Format {
            offset: 9,
            detail: format!("invalid header JSON: {e}"),
        })?;
        let unknown_header_keys: Vec<String> = value
            .as_object()
            .map(|m| m.keys().filter(|k| !HEADER_KEYS.contains(&k.as_str())).cloned().collect())
            .unwrap_or_default();
        for k in &unknown_header_keys {
            log::warn!("checkpoint header: ignoring unknown field {k:?}");
        }
        let header: CheckpointHeader = serde_json::from_value(value).map_err(|e| Error::Format {
            offset: 9,
            detail: format!("invalid header: {e}"),
        })?;

        let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
        let blob = &buf[json_end..];
        if blob.len() != expected {
            return Err(Error::Format {
                offset: json_end as u64,
                detail: format!("tensor blob length mismatch: manifest expects {expected} bytes, found {}", blob.len()),
            });
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut pos = 0;
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let vals = blob[pos..pos + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            tensors.push(Tensor::new(e.shape.clone(), vals).map_err(|err| Error::Format {
                offset: (json_end + pos) as u64,
                detail: format!("tensor {}: {err}", e.name),
            })?);
            pos += 4 * n;
        }
        Ok(Checkpoint {
            header,
            tensors,
            unknown_header_keys,
        })
    }

    /// Warns when the stored config hash differs from `expected`.
    pub fn check_config_hash(&self, expected: &str) -> bool {
        let same = self.header.config_hash == expected;
        if !same {
            log::warn!(
                "checkpoint config hash {} differs from current config {expected}",
                self.header.config_hash
            );
        }
        same
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, ck.encode()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(
            Architecture::Contrastive {
                encoder_widths: vec![3, 4, 2],
                encoder_activation: Activation::Relu,
                projection_widths: vec![2, 2, 2],
            },
            7,
            12,
            "abc".into(),
            Some("weaksupcon".into()),
            vec![
                ("a".into(), Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, -0.4]).unwrap()),
                ("b".into(), Tensor::matrix(1, 3, vec![1.0, 1e-8, -7.5]).unwrap()),
            ],
        )
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back, ck.quantized());
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = sample().encode().unwrap();
        bytes[1] = b'Z';
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn blob_length_mismatch() {
        let bytes = sample().encode().unwrap();
        let err = Checkpoint::decode(&bytes[..bytes.len() - 4]).unwrap_err().to_string();
        assert!(err.contains("manifest expects 28 bytes, found 24"), "{err}");
    }

    #[test]
    fn unknown_header_field_is_tolerated() {
        let ck = sample();
        let mut header = serde_json::to_value(&ck.header).unwrap();
        header.as_object_mut().unwrap().insert("future_field".into(), serde_json::json!({"x": 1}));
        let json = serde_json::to_vec(&header).unwrap();
        let good = ck.encode().unwrap();
        let old_len = u32::from_le_bytes(good[5..9].try_into().unwrap()) as usize;
        let mut bytes = good[..5].to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&good[9 + old_len..]);
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.unknown_header_keys, vec!["future_field".to_string()]);
        assert_eq!(back.tensors, ck.quantized().tensors);
    }
}
