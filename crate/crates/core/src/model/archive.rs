//! Named-tensor container used for checkpoints and imported encoder weights.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   b"VSWA"
//! offset 4   u32 version (1)
//! offset 8   u64 manifest length in bytes
//! offset 16  manifest, UTF-8, one line per tensor:
//!            name \t dtype \t shape-csv \t offset \t length \n
//! then       payload; offset/length are bytes relative to its start
//! ```
//!
//! The only dtype is `f32`, stored as little-endian IEEE-754 words, so
//! `length == product(shape) * 4`.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VSWA";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightArchive {
    records: Vec<(String, Tensor)>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.contains(['\t', '\n']) {
            return Err(Error::Archive(format!("invalid tensor name {name:?}")));
        }
        if self.get(&name).is_some() {
            return Err(Error::Archive(format!("duplicate tensor name {name:?}")));
        }
        self.records.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.records.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Keeps only the records whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.records.retain(|(n, _)| keep(n));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let mut offset = 0usize;
        for (name, t) in &self.records {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let len = t.numel() * 4;
            manifest.push_str(&format!("{name}\tf32\t{}\t{offset}\t{len}\n", shape.join(",")));
            offset += len;
        }
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, t) in &self.records {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |offset: usize, msg: String| Error::CorruptManifest { offset: offset as u64, msg };
        if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
            return Err(corrupt(0, "missing VSWA magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(4, format!("unsupported version {version}")));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = HEADER_LEN
            .checked_add(manifest_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt(8, format!("manifest length {manifest_len} exceeds file size")))?;
        let manifest = std::str::from_utf8(&bytes[HEADER_LEN..payload_start])
            .map_err(|e| corrupt(HEADER_LEN + e.valid_up_to(), "manifest is not UTF-8".into()))?;
        let payload = &bytes[payload_start..];

        let mut archive = Self::new();
        let mut names = HashSet::new();
        let mut spans: Vec<(usize, usize, usize)> = Vec::new();
        let mut line_start = HEADER_LEN;
        for line in manifest.split_inclusive('\n') {
            let at = line_start;
            line_start += line.len();
            let line = line.trim_end_matches('\n');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, dtype, shape, offset, length] = fields[..] else {
                return Err(corrupt(at, format!("expected 5 tab-separated fields, got {}", fields.len())));
            };
            if dtype != "f32" {
                return Err(corrupt(at, format!("record {name:?}: unsupported dtype {dtype:?}")));
            }
            let shape: Vec<usize> = shape
                .split(',')
                .map(|d| d.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| corrupt(at, format!("record {name:?}: bad shape {shape:?}")))?;
            let parse = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|_| corrupt(at, format!("record {name:?}: bad {what} {s:?}")))
            };
            let (offset, length) = (parse(offset, "offset")?, parse(length, "length")?);
            let numel: usize = shape.iter().product();
            if shape.contains(&0) || length != numel * 4 {
                return Err(corrupt(at, format!("record {name:?}: length {length} does not match shape {shape:?}")));
            }
            if offset.checked_add(length).is_none_or(|end| end > payload.len()) {
                return Err(corrupt(at, format!("record {name:?}: bytes {offset}+{length} beyond payload")));
            }
            if !names.insert(name.to_string()) {
                return Err(corrupt(at, format!("duplicate record {name:?}")));
            }
            spans.push((offset, length, at));
            let data = payload[offset..offset + length]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            archive.records.push((name.to_string(), Tensor::new(shape, data)?));
        }
        spans.sort_unstable();
        for pair in spans.windows(2) {
            if pair[0].0 + pair[0].1 > pair[1].0 {
                return Err(corrupt(pair[1].2, "record overlaps the previous one".into()));
            }
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
