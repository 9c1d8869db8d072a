//! Named-array container format for model checkpoints.
//!
//! Layout, byte for byte:
//!
//! ```text
//! MNCKPT1\n
//! meta <key> <json-encoded string value>\n      (zero or more)
//! array <name> <f32|f64> <d0xd1x...> <offset>\n (zero or more)
//! DATA\n
//! <raw little-endian payloads>
//! ```
//!
//! Offsets are byte positions into the payload section that follows the
//! `DATA` line. Each array occupies `product(shape) * sizeof(dtype)` bytes.
//! Names are restricted to `[A-Za-z0-9._-]`; meta values are JSON strings so
//! they may carry arbitrary text (serialized network specs, for instance).
//! Encoding is deterministic: metadata is sorted by key and arrays keep their
//! insertion order with consecutive offsets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::element::{DType, Element};
use crate::tensor::Tensor;

pub const MAGIC: &str = "MNCKPT1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("checkpoint: bad magic, expected {MAGIC}")]
    BadMagic,
    #[error("checkpoint: malformed header line: {0}")]
    MalformedHeader(String),
    #[error("checkpoint: illegal array name {0:?}")]
    IllegalName(String),
    #[error("checkpoint: unknown dtype {0:?}")]
    UnknownDType(String),
    #[error("checkpoint: array {name} out of payload bounds (offset {offset}, len {len}, payload {payload})")]
    OutOfBounds {
        name: String,
        offset: usize,
        len: usize,
        payload: usize,
    },
    #[error("checkpoint: missing DATA separator")]
    MissingData,
    #[error("checkpoint: array {0} not found")]
    ArrayNotFound(String),
    #[error("checkpoint: array {name} has shape {got}, expected {expected}")]
    ShapeMismatch {
        name: String,
        got: String,
        expected: String,
    },
    #[error("checkpoint: missing metadata key {0}")]
    MissingMeta(String),
    #[error("checkpoint: invalid metadata for {key}: {msg}")]
    BadMeta { key: String, msg: String },
}

pub type Result<T> = core::result::Result<T, Error>;

fn name_ok(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
}

/// One stored array: raw little-endian bytes plus dtype and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl NamedArray {
    pub fn from_tensor<T: Element>(name: &str, tensor: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(tensor.len() * T::DTYPE.size_bytes());
        for &v in tensor.data() {
            v.write_le(&mut bytes);
        }
        NamedArray {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: tensor.shape().to_vec(),
            bytes,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decode into element type `T`, casting across precisions when needed.
    pub fn to_vec<T: Element>(&self) -> Vec<T> {
        let step = self.dtype.size_bytes();
        self.bytes
            .chunks_exact(step)
            .map(|chunk| match self.dtype {
                DType::F32 => T::cast(f32::read_le(chunk) as f64),
                DType::F64 => T::cast(f64::read_le(chunk)),
            })
            .collect()
    }
}

/// A set of named arrays plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| Error::ArrayNotFound(name.to_string()))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingMeta(key.to_string()))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            if !name_ok(k) {
                return Err(Error::IllegalName(k.clone()));
            }
            let json = serde_json::to_string(v).expect("string serializes");
            header.push_str(&format!("meta {k} {json}\n"));
        }
        let mut offset = 0usize;
        for a in &self.arrays {
            if !name_ok(&a.name) {
                return Err(Error::IllegalName(a.name.clone()));
            }
            let dims = fmt_dims(&a.shape);
            header.push_str(&format!(
                "array {} {} {} {}\n",
                a.name,
                a.dtype.as_str(),
                dims,
                offset
            ));
            offset += a.bytes.len();
        }
        header.push_str("DATA\n");
        let mut out = header.into_bytes();
        for a in &self.arrays {
            out.extend_from_slice(&a.bytes);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut pos = 0usize;
        let line_end = |pos: &mut usize| -> Result<String> {
            let start = *pos;
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            if *pos >= bytes.len() {
                return Err(Error::MissingData);
            }
            let line = core::str::from_utf8(&bytes[start..*pos])
                .map_err(|_| Error::MalformedHeader("non-utf8 header".into()))?
                .to_string();
            *pos += 1;
            Ok(line)
        };

        if line_end(&mut pos)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut meta = BTreeMap::new();
        let mut pending: Vec<(String, DType, Vec<usize>, usize)> = Vec::new();
        loop {
            let line = line_end(&mut pos)?;
            if line == "DATA" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (key, json) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::MalformedHeader(line.clone()))?;
                let value: String = serde_json::from_str(json)
                    .map_err(|_| Error::MalformedHeader(line.clone()))?;
                meta.insert(key.to_string(), value);
            } else if let Some(rest) = line.strip_prefix("array ") {
                let fields: Vec<&str> = rest.split(' ').collect();
                if fields.len() != 4 {
                    return Err(Error::MalformedHeader(line.clone()));
                }
                let name = fields[0].to_string();
                if !name_ok(&name) {
                    return Err(Error::IllegalName(name));
                }
                let dtype = DType::parse(fields[1])
                    .ok_or_else(|| Error::UnknownDType(fields[1].to_string()))?;
                let shape = parse_dims(fields[2])
                    .ok_or_else(|| Error::MalformedHeader(line.clone()))?;
                let offset: usize = fields[3]
                    .parse()
                    .map_err(|_| Error::MalformedHeader(line.clone()))?;
                pending.push((name, dtype, shape, offset));
            } else {
                return Err(Error::MalformedHeader(line));
            }
        }
        let payload = &bytes[pos..];
        let mut arrays = Vec::with_capacity(pending.len());
        for (name, dtype, shape, offset) in pending {
            let len = shape.iter().product::<usize>() * dtype.size_bytes();
            if offset + len > payload.len() {
                return Err(Error::OutOfBounds {
                    name,
                    offset,
                    len,
                    payload: payload.len(),
                });
            }
            arrays.push(NamedArray {
                name,
                dtype,
                shape,
                bytes: payload[offset..offset + len].to_vec(),
            });
        }
        Ok(Checkpoint { meta, arrays })
    }
}

fn fmt_dims(shape: &[usize]) -> String {
    let mut s = String::new();
    for (i, d) in shape.iter().enumerate() {
        if i > 0 {
            s.push('x');
        }
        s.push_str(&d.to_string());
    }
    s
}

fn parse_dims(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|d| d.parse().ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("note".to_string(), "hello \"world\"\nline".to_string());
        Checkpoint {
            meta,
            arrays: alloc::vec![
                NamedArray::from_tensor(
                    "layer.w",
                    &Tensor::<f64>::from_vec(&[2, 2], alloc::vec![1.0, -2.5, 0.0, 4.0]).unwrap(),
                ),
                NamedArray::from_tensor(
                    "layer.b",
                    &Tensor::<f32>::from_vec(&[2], alloc::vec![0.5, 1.5]).unwrap(),
                ),
            ],
        }
    }

    #[test]
    fn encode_decode_round_trip_is_identity() {
        let ckpt = sample();
        let bytes = ckpt.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(ckpt, back);
        // and byte-stable
        assert_eq!(bytes, back.encode().unwrap());
    }

    #[test]
    fn decode_rejects_bad_magic() {
        assert!(matches!(
            Checkpoint::decode(b"NOPE\nDATA\n"),
            Err(Error::BadMagic)
        ));
    }

    #[test]
    fn decode_rejects_truncated_payload() {
        let ckpt = sample();
        let bytes = ckpt.encode().unwrap();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 4]),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn cross_precision_read_casts() {
        let ckpt = sample();
        let w: Vec<f32> = ckpt.get("layer.w").unwrap().to_vec();
        assert_eq!(w, alloc::vec![1.0f32, -2.5, 0.0, 4.0]);
    }

    #[test]
    fn illegal_names_are_rejected() {
        let mut ckpt = sample();
        ckpt.arrays[0].name = "has space".into();
        assert!(matches!(ckpt.encode(), Err(Error::IllegalName(_))));
    }
}
