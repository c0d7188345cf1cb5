//! XSDW weight container.
//!
//! Layout, little-endian: magic `XSDW`, version `u32`, tensor count `u32`,
//! then per tensor a `u16` name length, the UTF-8 name, a `u8` rank, `u32`
//! dims and the `f32` payload; a CRC32 of everything before it closes the
//! file. The first tensor, `__manifest__`, holds the JSON graph manifest as
//! UTF-8 bytes padded with spaces to a multiple of four, viewed as `f32`
//! words of rank 1.

use std::path::Path;

use indexmap::IndexMap;

use super::graph::Manifest;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::{atomic_write, Cursor};

pub const MAGIC: &[u8; 4] = b"XSDW";
pub const VERSION: u32 = 1;
pub const MANIFEST_TENSOR: &str = "__manifest__";

/// Named tensors plus the manifest they implement. Immutable once loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    manifest: Manifest,
    manifest_bytes: Vec<u8>,
    tensors: IndexMap<String, Tensor>,
}

fn pad_manifest(mut bytes: Vec<u8>) -> Vec<u8> {
    while !bytes.len().is_multiple_of(4) {
        bytes.push(b' ');
    }
    bytes
}

impl WeightStore {
    /// Empty store for a manifest.
    pub fn new(manifest: &Manifest) -> Result<Self> {
        let bytes = pad_manifest(serde_json::to_vec(manifest)?);
        Ok(Self {
            manifest: manifest.clone(),
            manifest_bytes: bytes,
            tensors: IndexMap::new(),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name == MANIFEST_TENSOR || name.len() > u16::MAX as usize {
            return Err(Error::Weights(format!("invalid tensor name `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.shift_remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Manifest against the fixed interfaces, then every tensor it names.
    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        for (name, shape) in self.manifest.required_tensors() {
            let t = self.get(&name)?;
            if t.shape != shape {
                return Err(Error::Weights(format!(
                    "tensor `{name}` has shape {:?}, manifest expects {shape:?}",
                    t.shape
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&((self.tensors.len() + 1) as u32).to_le_bytes());
        let mut put = |name: &str, dims: &[usize], payload: &mut dyn Iterator<Item = [u8; 4]>| {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for w in payload {
                out.extend_from_slice(&w);
            }
        };
        let words = self.manifest_bytes.len() / 4;
        put(
            MANIFEST_TENSOR,
            &[words],
            &mut self.manifest_bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]),
        );
        for (name, t) in &self.tensors {
            put(name, &t.shape, &mut t.data.iter().map(|v| v.to_le_bytes()));
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and validates; `source` labels errors.
    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let store = Self::parse(bytes, source)?;
        store.validate()?;
        Ok(store)
    }

    /// Parses without checking the tensors against the manifest.
    pub fn parse(bytes: &[u8], source: &str) -> Result<Self> {
        let mut cur = Cursor::with_crc(bytes, source)?;
        cur.expect_magic(MAGIC)?;
        let version = cur.u32()?;
        if version != VERSION {
            return Err(cur.error(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut manifest: Option<(Manifest, Vec<u8>)> = None;
        let mut tensors = IndexMap::new();
        for i in 0..count {
            let at = cur.offset();
            let name_len = cur.u16()? as usize;
            let name = String::from_utf8(cur.bytes(name_len)?.to_vec())
                .map_err(|_| cur.error_at(at, "tensor name is not UTF-8"))?;
            let ndim = cur.u8()? as usize;
            let dims = (0..ndim)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| cur.error_at(at, format!("tensor `{name}` is too large")))?;
            let payload = cur.bytes(n)?;
            if i == 0 {
                if name != MANIFEST_TENSOR || ndim != 1 {
                    return Err(cur.error_at(at, format!("first tensor must be `{MANIFEST_TENSOR}`, found `{name}`")));
                }
                let text = std::str::from_utf8(payload).map_err(|_| cur.error_at(at, "manifest is not UTF-8"))?;
                let m: Manifest = serde_json::from_str(text.trim_end_matches(' '))
                    .map_err(|e| cur.error_at(at, format!("manifest JSON: {e}")))?;
                manifest = Some((m, payload.to_vec()));
                continue;
            }
            if name == MANIFEST_TENSOR || tensors.contains_key(&name) {
                return Err(cur.error_at(at, format!("duplicate tensor `{name}`")));
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, Tensor { shape: dims, data });
        }
        cur.finish()?;
        let (manifest, manifest_bytes) = manifest.ok_or_else(|| cur.error_at(12, "file holds no manifest"))?;
        Ok(Self {
            manifest,
            manifest_bytes,
            tensors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }
}
