//! `WSCF` v1 feature store.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "WSCF" | version u8 = 1 | dim u32 | num_bags u32
//! per bag: bag_id u32 | label u8 | has_mask u8 | n_instances u32
//!          | n_instances × dim f32 (row-major) | [n_instances × u8 mask]
//! ```

use std::path::Path;

use super::{Bag, BagLabel};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 4] = b"WSCF";
const VERSION: u8 = 1;

/// Bags sharing one instance width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub dim: usize,
    pub bags: Vec<Bag>,
}

impl FeatureStore {
    pub fn new(dim: usize, bags: Vec<Bag>) -> Result<Self> {
        if let Some(b) = bags.iter().find(|b| b.dim() != dim) {
            return Err(Error::InvalidBatch(format!(
                "bag {} has width {}, store width is {dim}",
                b.id,
                b.dim()
            )));
        }
        Ok(FeatureStore { dim, bags })
    }
}

pub fn encode_feature_store(store: &FeatureStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.bags.len() as u32).to_le_bytes());
    for bag in &store.bags {
        if bag.dim() != store.dim {
            return Err(Error::InvalidBatch(format!("bag {} has width {}", bag.id, bag.dim())));
        }
        out.extend_from_slice(&bag.id.to_le_bytes());
        out.push(bag.label.as_u8());
        out.push(bag.witness_mask.is_some() as u8);
        out.extend_from_slice(&(bag.len() as u32).to_le_bytes());
        for &v in bag.instances.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(mask) = &bag.witness_mask {
            out.extend(mask.iter().map(|&w| w as u8));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("truncated {what}: expected {n} bytes, found {remaining}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_feature_store(buf: &[u8]) -> Result<FeatureStore> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic {magic:?}, expected \"WSCF\""),
        });
    }
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let dim = c.u32("dim")? as usize;
    let num_bags = c.u32("num_bags")? as usize;
    let mut bags = Vec::with_capacity(num_bags.min(1 << 16));
    for _ in 0..num_bags {
        let header_at = c.pos as u64;
        let id = c.u32("bag_id")?;
        let label_byte = c.u8("label")?;
        let label = BagLabel::from_u8(label_byte).ok_or_else(|| Error::Format {
            offset: header_at + 4,
            detail: format!("bag {id}: invalid label byte {label_byte}"),
        })?;
        let has_mask = match c.u8("has_mask")? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Format {
                    offset: header_at + 5,
                    detail: format!("bag {id}: invalid has_mask byte {other}"),
                })
            }
        };
        let n = c.u32("n_instances")? as usize;
        let blob_at = c.pos as u64;
        let blob = c.take(n * dim * 4, &format!("bag {id} feature blob"))?;
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let mask = if has_mask {
            let bytes = c.take(n, &format!("bag {id} witness mask"))?;
            Some(bytes.iter().map(|&b| b != 0).collect())
        } else {
            None
        };
        let instances = Tensor::matrix(n, dim.max(1), values).map_err(|_| Error::Format {
            offset: blob_at,
            detail: format!("bag {id}: zero-width instances"),
        })?;
        let bag = Bag::new(id, label, instances, mask).map_err(|e| Error::Format {
            offset: header_at,
            detail: e.to_string(),
        })?;
        bags.push(bag);
    }
    if c.pos != buf.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            detail: format!("{} trailing bytes", buf.len() - c.pos),
        });
    }
    Ok(FeatureStore { dim, bags })
}

pub fn write_feature_store(path: impl AsRef<Path>, store: &FeatureStore) -> Result<()> {
    std::fs::write(path, encode_feature_store(store)?)?;
    Ok(())
}

pub fn read_feature_store(path: impl AsRef<Path>) -> Result<FeatureStore> {
    decode_feature_store(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureStore {
        let a = Bag::new(
            3,
            BagLabel::Positive,
            Tensor::matrix(2, 3, vec![0.1, -2.5, 1e-3, 7.0, 0.0, -0.3333]).unwrap(),
            Some(vec![false, true]),
        )
        .unwrap();
        let b = Bag::new(9, BagLabel::Negative, Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap(), None).unwrap();
        FeatureStore::new(3, vec![a, b]).unwrap()
    }

    fn to_f32(store: &FeatureStore) -> FeatureStore {
        let mut s = store.clone();
        for bag in &mut s.bags {
            bag.instances.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        s
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let s = sample();
        let decoded = decode_feature_store(&encode_feature_store(&s).unwrap()).unwrap();
        assert_eq!(decoded, to_f32(&s));
    }

    #[test]
    fn empty_store() {
        let s = FeatureStore::new(4, vec![]).unwrap();
        let bytes = encode_feature_store(&s).unwrap();
        assert_eq!(bytes.len(), 13);
        assert_eq!(decode_feature_store(&bytes).unwrap(), s);
    }

    #[test]
    fn truncation_names_lengths() {
        let bytes = encode_feature_store(&sample()).unwrap();
        // cut in the middle of the first bag's blob
        let cut = 13 + 10 + 8;
        match decode_feature_store(&bytes[..cut]) {
            Err(Error::Format { offset, detail }) => {
                assert_eq!(offset, 23);
                assert!(detail.contains("expected 24 bytes, found 8"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_feature_store(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_feature_store(&bytes), Err(Error::Format { offset: 4, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_feature_store(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn byte_layout() {
        let bytes = encode_feature_store(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"WSCF");
        assert_eq!(bytes[4], 1);
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 3);
        assert_eq!(bytes[17], 1);
        assert_eq!(bytes[18], 1);
        assert_eq!(u32::from_le_bytes(bytes[19..23].try_into().unwrap()), 2);
        // 6 floats + 2 mask bytes, then bag 9 header
        assert_eq!(u32::from_le_bytes(bytes[49..53].try_into().unwrap()), 9);
    }
}
