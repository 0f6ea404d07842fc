//! Parameter file format.
//!
//! ```text
//! [u8 version][u32 LE header length][header JSON][f64 LE data block]
//! ```
//!
//! The header lists every tensor as `(name, shape, offset)`, with `offset` in
//! bytes from the start of the data block, plus a free-form `meta` object.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{group_of, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Named tensors read back from a parameter file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (n, _) in &self.tensors {
            let g = group_of(n);
            if !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    /// Overwrites every parameter of `store` from this checkpoint. Names and
    /// shapes must match exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let src = self
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
            if src.shape() != store.get(id).shape() {
                return Err(Error::Dimension {
                    op: "restore",
                    left: store.get(id).shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            store.get_mut(id).data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

pub fn encode(store: &ParamStore, meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for id in store.ids() {
        let t = store.get(id);
        tensors.push(TensorEntry {
            name: store.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel() * 8;
    }
    let header = serde_json::to_vec(&Header { tensors, meta })?;
    let mut out = Vec::with_capacity(5 + header.len() + offset);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for id in store.ids() {
        for v in store.get(id).data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let (&version, rest) = bytes
        .split_first()
        .ok_or_else(|| Error::Format("empty file".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    if rest.len() < 4 {
        return Err(Error::Format("truncated header length".into()));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])?;
    let data = &rest[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * 8;
        if end > data.len() {
            return Err(Error::Format(format!("tensor `{}` runs past the data block", e.name)));
        }
        let vals = data[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((e.name, Tensor::new(&e.shape, vals)?));
    }
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
    })
}

pub fn save(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let bytes = encode(store, meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
