//! Binary container for named parameter arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "ISOCKPT1"
//! 8 bytes   u64 header length H
//! H bytes   UTF-8 JSON header
//! ...       f32 little-endian payload
//! ```
//!
//! The JSON header holds `byte_order`, `dtype`, a free-form `meta` object
//! (model configuration, training state) and a `tensors` list of
//! `{name, shape, offset}` where `offset` counts f32 elements into the
//! payload. Arrays are row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ISOCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    byte_order: String,
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive {
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            data,
        });
    }

    /// Adds every parameter of `ps` under `prefix/`.
    pub fn push_params(&mut self, prefix: &str, ps: &ParamStore) {
        for (name, shape, values) in ps.iter() {
            self.push(format!("{prefix}/{name}"), shape.to_vec(), values.to_vec());
        }
    }

    /// Adds arrays shaped like `ps` (for optimizer moments).
    pub fn push_like(&mut self, prefix: &str, ps: &ParamStore, arrays: &[Vec<f32>]) {
        for (i, a) in arrays.iter().enumerate() {
            self.push(format!("{prefix}/{}", ps.name(i)), ps.shape(i).to_vec(), a.clone());
        }
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format(format!("checkpoint has no array '{name}'")))
    }

    /// Reads arrays matching the names and shapes of `ps`.
    pub fn read_like(&self, prefix: &str, ps: &ParamStore) -> Result<Vec<Vec<f32>>> {
        (0..ps.len())
            .map(|i| {
                let a = self.get(&format!("{prefix}/{}", ps.name(i)))?;
                if a.shape != ps.shape(i) {
                    return Err(Error::format(format!(
                        "array '{}' has shape {:?}, model expects {:?}",
                        a.name,
                        a.shape,
                        ps.shape(i)
                    )));
                }
                Ok(a.data.clone())
            })
            .collect()
    }

    /// Overwrites `ps` with the arrays stored under `prefix/`.
    pub fn load_params(&self, prefix: &str, ps: &mut ParamStore) -> Result<()> {
        let vals = self.read_like(prefix, ps)?;
        for (i, v) in vals.into_iter().enumerate() {
            ps.values_mut(i).copy_from_slice(&v);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::invalid(format!("array '{}' does not match its shape", a.name)));
            }
            tensors.push(Entry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset,
            });
            offset += a.data.len();
        }
        let header = serde_json::to_vec(&Header {
            byte_order: "little".into(),
            dtype: "f32".into(),
            meta: self.meta.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::format("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::format("truncated checkpoint header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.byte_order != "little" || header.dtype != "f32" {
            return Err(Error::format(format!(
                "unsupported checkpoint encoding {} {}",
                header.dtype, header.byte_order
            )));
        }
        let payload = &bytes[16 + hlen..];
        let mut arrays = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(4 * e.offset..4 * (e.offset + n))
                .ok_or_else(|| Error::format(format!("truncated data for '{}'", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Archive {
            meta: header.meta,
            arrays,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip() {
        let mut a = Archive::new(serde_json::json!({"kind": "test", "n": 3}));
        a.push("x", vec![2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 7.0]);
        a.push("y", vec![1], vec![0.125]);
        let b = Archive::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Archive::from_bytes(b"not a checkpoint").is_err());
        let mut a = Archive::new(serde_json::Value::Null);
        a.push("x", vec![3], vec![1.0, 2.0, 3.0]);
        let bytes = a.to_bytes().unwrap();
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn shape_mismatch_on_load() {
        let mut ps = ParamStore::new();
        ps.add("w", vec![2], vec![0.0, 0.0]);
        let mut a = Archive::new(serde_json::Value::Null);
        a.push("m/w", vec![3], vec![1.0, 2.0, 3.0]);
        assert!(a.load_params("m", &mut ps).is_err());
    }
}
