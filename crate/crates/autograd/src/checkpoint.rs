//! Parameter container files.
//!
//! Layout: a UTF-8 header, then raw payloads.
//!
//! ```text
//! proactive-checkpoint 1
//! entries 2
//! detector.stem.weight f32 16x3x3x3
//! detector.stem.bias f32 16
//! end
//! <little-endian f32 payload of each entry, in header order>
//! ```
//!
//! Rank-0 tensors are written with the shape token `scalar`. Entry names may
//! not contain whitespace.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &str = "proactive-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected bytes after the last payload")]
    TrailingBytes(usize),
    #[error("entry {0} missing from checkpoint")]
    Missing(String),
    #[error("entry {name}: checkpoint shape {found:?} does not match {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        let name = name.into();
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "invalid checkpoint entry name {name:?}"
        );
        self.entries.push(CheckpointEntry { name, tensor });
    }

    /// Every parameter and buffer of `store`, named `<label>.<name>`.
    pub fn from_store(store: &ParamStore<f32>) -> Self {
        let mut ck = Self::new();
        ck.extend_from_store(store);
        ck
    }

    pub fn extend_from_store(&mut self, store: &ParamStore<f32>) {
        for (_, p) in store.iter() {
            self.push(format!("{}.{}", store.label(), p.name), p.value.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    /// Overwrites every value of `store` from the matching `<label>.<name>` entry.
    pub fn load_into(&self, store: &mut ParamStore<f32>) -> Result<(), CheckpointError> {
        let label = store.label().to_string();
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let full = format!("{label}.{name}");
            let t = self.get(&full).ok_or_else(|| CheckpointError::Missing(full.clone()))?;
            let dst = store.value_mut(id);
            if t.shape() != dst.shape() {
                return Err(CheckpointError::Shape {
                    name: full,
                    expected: dst.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "{MAGIC} {VERSION}").unwrap();
        writeln!(out, "entries {}", self.entries.len()).unwrap();
        for e in &self.entries {
            let shape = if e.tensor.shape().is_empty() {
                "scalar".to_string()
            } else {
                e.tensor
                    .shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            };
            writeln!(out, "{} f32 {}", e.name, shape).unwrap();
        }
        writeln!(out, "end").unwrap();
        for e in &self.entries {
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str, CheckpointError> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| CheckpointError::Malformed("header ends early".into()))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end])
                .map_err(|_| CheckpointError::Malformed("header is not UTF-8".into()))
        };
        let first = next_line().map_err(|_| CheckpointError::BadMagic)?;
        let mut parts = first.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(CheckpointError::BadMagic);
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed(format!("bad version line {first:?}")))?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count_line = next_line()?;
        let count: usize = count_line
            .strip_prefix("entries ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed(format!("bad entry count {count_line:?}")))?;
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line()?;
            let fields: Vec<&str> = line.split(' ').collect();
            let [name, dtype, shape] = fields[..] else {
                return Err(CheckpointError::Malformed(format!("bad entry line {line:?}")));
            };
            if dtype != "f32" {
                return Err(CheckpointError::Malformed(format!("unsupported dtype {dtype}")));
            }
            let dims: Vec<usize> = if shape == "scalar" {
                Vec::new()
            } else {
                shape
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| CheckpointError::Malformed(format!("bad shape {shape:?}")))?
            };
            specs.push((name.to_string(), dims));
        }
        if next_line()? != "end" {
            return Err(CheckpointError::Malformed("missing end marker".into()));
        }
        let payload = &bytes[pos..];
        let expected: usize = specs
            .iter()
            .map(|(_, d)| 4 * d.iter().product::<usize>())
            .sum();
        if payload.len() < expected {
            return Err(CheckpointError::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(CheckpointError::TrailingBytes(payload.len() - expected));
        }
        let mut offset = 0;
        let mut ck = Checkpoint::new();
        for (name, dims) in specs {
            let n: usize = dims.iter().product();
            let data = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += 4 * n;
            ck.entries.push(CheckpointEntry {
                name,
                tensor: Tensor::new(&dims, data).expect("length matches shape"),
            });
        }
        Ok(ck)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("a.w", Tensor::new(&[2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 3.0e7]).unwrap());
        ck.push("a.s", Tensor::scalar(0.125));
        ck
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let bytes = sample().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_is_textual() {
        let bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes[..80]);
        assert!(text.starts_with("proactive-checkpoint 1\nentries 2\na.w f32 2x2\na.s f32 scalar\nend\n"));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_distinct() {
        let bytes = sample().to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, CheckpointError::Truncated { .. }));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&longer).unwrap_err(),
            CheckpointError::TrailingBytes(1)
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"garbage\n").unwrap_err(),
            CheckpointError::BadMagic
        ));
        let v2 = String::from_utf8_lossy(&bytes).replacen("checkpoint 1", "checkpoint 2", 1);
        assert!(matches!(
            Checkpoint::from_bytes(v2.as_bytes()).unwrap_err(),
            CheckpointError::Version(2) | CheckpointError::Malformed(_)
        ));
    }

    #[test]
    fn store_round_trip() {
        let mut store = ParamStore::<f32>::new("net");
        let id = store.add("w", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        store.add_buffer("running", Tensor::scalar(4.0));
        let ck = Checkpoint::from_store(&store);
        assert!(ck.get("net.w").is_some());
        store.value_mut(id).data_mut().fill(0.0);
        ck.load_into(&mut store).unwrap();
        assert_eq!(store.param(id).value.data(), &[1.0, 2.0, 3.0]);
    }
}
