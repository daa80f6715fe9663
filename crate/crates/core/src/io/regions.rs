//! Region files: precomputed proposals with their region embeddings.
//!
//! ```json
//! {"regions": [{"image_id": 1, "bbox": [x, y, w, h], "embedding": [...], "score": 0.9}]}
//! ```
//!
//! `score` is the proposal's objectness and defaults to 1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coco::write_json;
use crate::error::{Error, Result};
use crate::pseudo::RegionProposal;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionFile {
    pub regions: Vec<RegionProposal>,
}

impl RegionFile {
    pub fn validate(&self) -> Result<()> {
        let mut dim = None;
        for (i, r) in self.regions.iter().enumerate() {
            if !r.bbox.is_valid() {
                return Err(Error::Integrity(format!("region {i} has an invalid bbox")));
            }
            if !r.score.is_finite() {
                return Err(Error::CorruptData(format!("region {i} has a non-finite score")));
            }
            match dim {
                None => dim = Some(r.embedding.dim()),
                Some(d) if d != r.embedding.dim() => {
                    return Err(Error::dim(format!("region dim {d}"), format!("{} in region {i}", r.embedding.dim())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn read_regions(path: impl AsRef<Path>) -> Result<Vec<RegionProposal>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: RegionFile = serde_json::from_slice(&bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    file.validate()?;
    Ok(file.regions)
}

pub fn write_regions(path: impl AsRef<Path>, regions: &[RegionProposal]) -> Result<()> {
    let file = RegionFile {
        regions: regions.to_vec(),
    };
    file.validate()?;
    write_json(path.as_ref(), &file, false)
}
