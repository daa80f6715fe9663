//! Packed base galleries: feature grids with their part-label grids.
//!
//! The layout mirrors the feature file with magic `"PGL1"`; after each
//! record's dimension fields come the object name (u32 length + UTF-8
//! bytes), then the class token and cells, then `height * width` u32 labels
//! in row-major order. The same metadata footer closes the file.

use std::path::Path;

use super::features::{read_footer, read_grid, read_magic, write_footer, write_grid, FeatureMetadata, Reader};
use crate::correspondence::{BaseGallery, GalleryEntry};
use crate::error::{Error, Result};
use crate::math::LabelGrid;

pub const GALLERY_MAGIC: &[u8; 4] = b"PGL1";

pub fn encode_gallery(gallery: &BaseGallery, metadata: &FeatureMetadata) -> Result<Vec<u8>> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let mut out = Vec::new();
    out.extend_from_slice(GALLERY_MAGIC);
    out.extend_from_slice(&(gallery.len() as u64).to_le_bytes());
    for e in gallery.entries() {
        write_grid(&mut out, e.features(), Some(e.object_name()));
        for l in e.labels().as_slice() {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    write_footer(&mut out, metadata);
    Ok(out)
}

pub fn decode_gallery(bytes: &[u8]) -> Result<(BaseGallery, FeatureMetadata)> {
    let mut r = Reader::new(bytes);
    read_magic(&mut r, GALLERY_MAGIC)?;
    let count = r.u64("record count")?;
    if count == 0 {
        return Err(Error::EmptyGallery);
    }
    let mut entries = Vec::new();
    for _ in 0..count {
        let (grid, name) = read_grid(&mut r, true)?;
        let (h, w) = grid.shape();
        let raw = r.take(h * w * 4, "labels")?;
        let labels = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = LabelGrid::new(h, w, labels)?;
        entries.push(GalleryEntry::new(grid, labels, name.unwrap_or_default())?);
    }
    let metadata = read_footer(&mut r)?;
    Ok((BaseGallery::new(entries)?, metadata))
}

pub fn read_gallery(path: impl AsRef<Path>) -> Result<(BaseGallery, FeatureMetadata)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gallery(&bytes)
}

pub fn write_gallery(path: impl AsRef<Path>, gallery: &BaseGallery, metadata: &FeatureMetadata) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_gallery(gallery, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
