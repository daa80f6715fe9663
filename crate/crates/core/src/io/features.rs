//! Binary feature-grid files shared with the feature exporter.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "PFT1"
//! count        u64      number of records (>= 1)
//! record * count:
//!   image_id   u64
//!   height     u32      >= 1
//!   width      u32      >= 1
//!   dim        u32      >= 1
//!   class      dim * f32
//!   cells      height * width * dim * f32, row-major, cell-contiguous
//! meta_len     u32
//! metadata     meta_len bytes of UTF-8 JSON (an object)
//! ```
//!
//! Nothing may follow the metadata. Every float must be finite. The
//! metadata text is carried through verbatim so that read-then-write is
//! byte-identical.

use std::collections::HashSet;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::math::{Embedding, FeatureGrid};

pub const FEATURE_MAGIC: &[u8; 4] = b"PFT1";

/// Exporter metadata footer, kept as the original JSON text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMetadata {
    raw: String,
}

impl FeatureMetadata {
    pub fn new(exporter: &str, model_id: &str, patch_size: Option<u32>) -> Self {
        let mut obj = Map::new();
        obj.insert("exporter".into(), Value::from(exporter));
        obj.insert("model_id".into(), Value::from(model_id));
        if let Some(p) = patch_size {
            obj.insert("patch_size".into(), Value::from(p));
        }
        FeatureMetadata {
            raw: Value::Object(obj).to_string(),
        }
    }

    pub fn from_json(raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        match serde_json::from_str::<Value>(&raw) {
            Ok(Value::Object(_)) => Ok(FeatureMetadata { raw }),
            Ok(_) => Err(Error::Format("feature metadata must be a JSON object".into())),
            Err(e) => Err(Error::Format(format!("feature metadata is not valid JSON: {e}"))),
        }
    }

    pub fn as_json(&self) -> &str {
        &self.raw
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        serde_json::from_str::<Value>(&self.raw)
            .ok()?
            .get(key)
            .cloned()
    }

    pub fn exporter(&self) -> Option<String> {
        self.get("exporter")?.as_str().map(str::to_string)
    }

    pub fn model_id(&self) -> Option<String> {
        self.get("model_id")?.as_str().map(str::to_string)
    }

    pub fn patch_size(&self) -> Option<u32> {
        self.get("patch_size")?.as_u64().and_then(|v| u32::try_from(v).ok())
    }
}

impl Default for FeatureMetadata {
    fn default() -> Self {
        FeatureMetadata::new("ovparts", "unknown", None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub grids: Vec<FeatureGrid>,
    pub metadata: FeatureMetadata,
}

/// Little-endian cursor over an in-memory file.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::TruncatedFile(format!(
                "need {n} bytes for {what} at offset {}, {} remain",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what} size overflows")))?;
        let raw = self.take(bytes, what)?;
        let v: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::CorruptData(format!("non-finite value at index {i} of {what}")));
        }
        Ok(v)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn read_magic(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    let got = r
        .take(4, "magic")
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Record header plus class token and cells.
pub(crate) fn read_grid(r: &mut Reader<'_>, name_follows: bool) -> Result<(FeatureGrid, Option<String>)> {
    let image_id = r.u64("image id")?;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let d = r.u32("dim")? as usize;
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Format(format!(
            "record {image_id} declares an empty shape {h}x{w}x{d}"
        )));
    }
    let name = if name_follows {
        let n = r.u32("object name length")? as usize;
        let bytes = r.take(n, "object name")?;
        Some(
            String::from_utf8(bytes.to_vec())
                .map_err(|_| Error::Format(format!("object name of record {image_id} is not UTF-8")))?,
        )
    } else {
        None
    };
    let cells_len = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("record {image_id} shape overflows")))?;
    let token = r.f32s(d, "class token")?;
    let cells = r.f32s(cells_len, "cells")?;
    let grid = FeatureGrid::new(image_id, h, w, cells, Embedding::new(token)?)?;
    Ok((grid, name))
}

pub(crate) fn write_grid(out: &mut Vec<u8>, g: &FeatureGrid, name: Option<&str>) {
    out.extend_from_slice(&g.image_id().to_le_bytes());
    for v in [g.height(), g.width(), g.dim()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    if let Some(name) = name {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for v in g.class_token().as_slice().iter().chain(g.cells()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_footer(r: &mut Reader<'_>) -> Result<FeatureMetadata> {
    let n = r.u32("metadata length")? as usize;
    let bytes = r.take(n, "metadata")?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after metadata", r.remaining())));
    }
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    FeatureMetadata::from_json(text)
}

pub(crate) fn write_footer(out: &mut Vec<u8>, meta: &FeatureMetadata) {
    out.extend_from_slice(&(meta.raw.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.raw.as_bytes());
}

pub(crate) fn check_dims_and_ids<'a>(grids: impl Iterator<Item = &'a FeatureGrid>) -> Result<()> {
    let mut seen = HashSet::new();
    let mut dim = None;
    for g in grids {
        if !seen.insert(g.image_id()) {
            return Err(Error::Integrity(format!("duplicate image id {}", g.image_id())));
        }
        match dim {
            None => dim = Some(g.dim()),
            Some(d) if d != g.dim() => {
                return Err(Error::dim(
                    format!("feature dim {d}"),
                    format!("{} in image {}", g.dim(), g.image_id()),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = Reader::new(bytes);
    read_magic(&mut r, FEATURE_MAGIC)?;
    let count = r.u64("record count")?;
    if count == 0 {
        return Err(Error::Format("feature file holds no records".into()));
    }
    let mut grids = Vec::new();
    for _ in 0..count {
        grids.push(read_grid(&mut r, false)?.0);
    }
    let metadata = read_footer(&mut r)?;
    check_dims_and_ids(grids.iter())?;
    Ok(FeatureFile { grids, metadata })
}

pub fn encode_feature_file(grids: &[FeatureGrid], metadata: &FeatureMetadata) -> Result<Vec<u8>> {
    if grids.is_empty() {
        return Err(Error::Format("refusing to write a feature file with no records".into()));
    }
    check_dims_and_ids(grids.iter())?;
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(grids.len() as u64).to_le_bytes());
    for g in grids {
        write_grid(&mut out, g, None);
    }
    write_footer(&mut out, metadata);
    Ok(out)
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes)
}

pub fn write_feature_file(path: impl AsRef<Path>, grids: &[FeatureGrid], metadata: &FeatureMetadata) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_file(grids, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
