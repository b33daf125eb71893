//! Binary tensor container: an 8-byte little-endian header length, a JSON
//! header, then little-endian `f32` payloads at the byte offsets the header
//! lists.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte range within the payload section.
    pub offsets: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f32],
}

/// Serializes `meta` and `tensors` to bytes.
pub fn encode<M: Serialize>(meta: &M, tensors: &[Tensor<'_>]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for t in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::Integrity(format!(
                "tensor `{}` has {} values but shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        let bytes = t.data.len() * 4;
        entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), dtype: "f32".into(), offsets: [offset, offset + bytes] });
        offset += bytes;
    }
    let header = serde_json::to_vec(&Header { meta, tensors: entries }).map_err(|e| Error::json("container header", e))?;
    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub struct Decoded<M> {
    pub meta: M,
    pub tensors: Vec<(TensorEntry, Vec<f32>)>,
}

impl<M> Decoded<M> {
    pub fn take(&mut self, name: &str) -> Option<(TensorEntry, Vec<f32>)> {
        let i = self.tensors.iter().position(|(e, _)| e.name == name)?;
        Some(self.tensors.swap_remove(i))
    }
}

pub fn decode<M: DeserializeOwned>(bytes: &[u8], context: &str) -> Result<Decoded<M>> {
    let bad = |why: &str| Error::Integrity(format!("{context}: {why}"));
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let header_end = 8usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header<M> =
        serde_json::from_slice(&bytes[8..header_end]).map_err(|e| Error::json(context.to_string(), e))?;
    let payload = &bytes[header_end..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let [start, end] = entry.offsets;
        if entry.dtype != "f32" {
            return Err(bad(&format!("tensor `{}` has unsupported dtype {}", entry.name, entry.dtype)));
        }
        if start > end || end > payload.len() || (end - start) != entry.shape.iter().product::<usize>() * 4 {
            return Err(bad(&format!("tensor `{}` has inconsistent offsets", entry.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((entry, data));
    }
    Ok(Decoded { meta: header.meta, tensors })
}

pub fn write_file<M: Serialize>(path: &Path, meta: &M, tensors: &[Tensor<'_>]) -> Result<()> {
    let bytes = encode(meta, tensors)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file<M: DeserializeOwned>(path: &Path) -> Result<Decoded<M>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode() {
        let a = [1.0f32, -2.5, f32::MIN_POSITIVE];
        let b = [0.125f32; 6];
        let bytes = encode(
            &"meta",
            &[Tensor { name: "a".into(), shape: vec![3], data: &a }, Tensor { name: "b".into(), shape: vec![2, 3], data: &b }],
        )
        .unwrap();
        let mut d: Decoded<String> = decode(&bytes, "test").unwrap();
        assert_eq!(d.meta, "meta");
        assert_eq!(d.take("b").unwrap().1, b.to_vec());
        assert_eq!(d.take("a").unwrap().1, a.to_vec());
        assert!(decode::<String>(&bytes[..bytes.len() - 1], "test").is_err());
    }
}
