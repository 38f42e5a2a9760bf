//! Dataset container files.
//!
//! ```text
//! proactive-dataset 1
//! spec {"image_size":64,...}
//! count 10
//! image 3x64x64
//! end
//! ```
//!
//! followed by `count` records and a trailer. Each record is the magic
//! `SCN1`, a little-endian u32 annotation count, per annotation four f64
//! coordinates (x1 y1 x2 y2) and a u32 class id, the image as
//! channel-planar little-endian f32, and the segmentation map as packed bits
//! (row-major, least significant bit first). The trailer is `END1` plus the
//! SHA-256 of every preceding byte.

use std::path::Path;

use proactive_metrics::{BBox, SegMap};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scene::{generate_scene, Annotation, DatasetSpec, Image, Scene, SynthError, CHANNELS};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "proactive-dataset";
const RECORD: &[u8; 4] = b"SCN1";
const TRAILER: &[u8; 4] = b"END1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a dataset file")]
    BadMagic,
    #[error("unsupported dataset version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("dataset truncated at byte {0}")]
    Truncated(usize),
    #[error("header announces {header} scenes but the file holds {found}")]
    Count { header: usize, found: usize },
    #[error("checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let scenes = (0..spec.count as u64)
            .map(|i| generate_scene(spec, i))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            spec: spec.clone(),
            scenes,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.spec.image_size;
        let spec = serde_json::to_string(&self.spec).expect("spec serializes");
        let mut out = format!(
            "{MAGIC} {FORMAT_VERSION}\nspec {spec}\ncount {}\nimage {CHANNELS}x{n}x{n}\nend\n",
            self.scenes.len()
        )
        .into_bytes();
        for s in &self.scenes {
            out.extend_from_slice(RECORD);
            out.extend_from_slice(&(s.annotations.len() as u32).to_le_bytes());
            for a in &s.annotations {
                for v in [a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&(a.class_id as u32).to_le_bytes());
            }
            for v in &s.image.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend(pack_bits(s.seg_map.bits()));
        }
        out.extend_from_slice(TRAILER);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let first = r.line()?;
        let (magic, version) = first.split_once(' ').ok_or(FormatError::BadMagic)?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version: u32 = version
            .parse()
            .map_err(|_| FormatError::Malformed("version".into()))?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version { found: version });
        }
        let spec: DatasetSpec = serde_json::from_str(r.field("spec")?)
            .map_err(|e| FormatError::Malformed(format!("spec: {e}")))?;
        spec.validate()?;
        let count: usize = r
            .field("count")?
            .parse()
            .map_err(|_| FormatError::Malformed("count".into()))?;
        let n = spec.image_size;
        if r.field("image")? != format!("{CHANNELS}x{n}x{n}") {
            return Err(FormatError::Malformed("image shape disagrees with spec".into()));
        }
        if r.line()? != "end" {
            return Err(FormatError::Malformed("missing end of header".into()));
        }

        let mut scenes = Vec::new();
        loop {
            let tag = r.take(4)?;
            if tag == TRAILER {
                break;
            }
            if tag != RECORD {
                return Err(FormatError::Malformed(format!("bad record tag at byte {}", r.pos - 4)));
            }
            scenes.push(r.scene(n)?);
        }
        let body_len = r.pos;
        let digest = r.take(32)?;
        if r.pos != bytes.len() {
            return Err(FormatError::Malformed("bytes after trailer".into()));
        }
        if scenes.len() != count {
            return Err(FormatError::Count {
                header: count,
                found: scenes.len(),
            });
        }
        if Sha256::digest(&bytes[..body_len]).as_slice() != digest {
            return Err(FormatError::Checksum);
        }
        Ok(Self { spec, scenes })
    }
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, dataset.to_bytes())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    Dataset::from_bytes(&std::fs::read(path)?)
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str, FormatError> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(FormatError::Truncated(self.bytes.len()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| FormatError::BadMagic)
    }

    fn field(&mut self, key: &str) -> Result<&'a str, FormatError> {
        let line = self.line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(FormatError::Malformed(format!("expected `{key}` line"))),
        }
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn scene(&mut self, n: usize) -> Result<Scene, FormatError> {
        let count = self.u32()? as usize;
        let mut annotations = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let bbox = BBox {
                x1: self.f64()?,
                y1: self.f64()?,
                x2: self.f64()?,
                y2: self.f64()?,
            };
            let class_id = self.u32()? as usize;
            annotations.push(Annotation { bbox, class_id });
        }
        let data = self
            .take(CHANNELS * n * n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let packed = self.take((n * n).div_ceil(8))?;
        let bits = (0..n * n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        let seg_map = SegMap::from_bits(n, n, bits).expect("length is n*n");
        Ok(Scene {
            image: Image {
                height: n,
                width: n,
                data,
            },
            annotations,
            seg_map,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_packing_is_lsb_first() {
        assert_eq!(pack_bits(&[true, false, false, false, false, false, false, false, true]), vec![1, 1]);
    }
}
