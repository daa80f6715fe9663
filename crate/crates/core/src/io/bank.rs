//! Text embedding banks on disk.
//!
//! A bank is a feature file holding one 1x1 record per category: the record's
//! image id is the category id and both its class token and its single cell
//! hold the embedding. A JSON sidecar at `<bank path>.json` records the
//! template and the exact prompt string of every category:
//!
//! ```json
//! {"prompt": "object-part", "categories": [{"id": 10, "prompt": "a dog head"}]}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::coco::write_json;
use super::features::{read_feature_file, write_feature_file, FeatureMetadata};
use crate::error::{Error, Result};
use crate::math::FeatureGrid;
use crate::ovscore::TextEmbeddingBank;
use crate::taxonomy::{CategoryId, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub id: CategoryId,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSidecar {
    pub prompt: PromptTemplate,
    pub categories: Vec<SidecarEntry>,
}

pub fn sidecar_path(bank_path: &Path) -> PathBuf {
    let mut s = bank_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<TextEmbeddingBank> {
    let path = path.as_ref();
    let file = read_feature_file(path)?;
    let side_path = sidecar_path(path);
    let text = std::fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: BankSidecar = serde_json::from_slice(&text).map_err(|source| Error::Parse {
        path: side_path.clone(),
        source,
    })?;
    let mut prompts = BTreeMap::new();
    for c in sidecar.categories {
        if prompts.insert(c.id, c.prompt).is_some() {
            return Err(Error::Integrity(format!("sidecar lists category {} twice", c.id)));
        }
    }
    let mut items = Vec::with_capacity(file.grids.len());
    for g in file.grids {
        if g.shape() != (1, 1) {
            return Err(Error::Format(format!(
                "bank record {} is {}x{}, expected 1x1",
                g.image_id(),
                g.height(),
                g.width()
            )));
        }
        let id = CategoryId::try_from(g.image_id())
            .map_err(|_| Error::Format(format!("bank record id {} is not a category id", g.image_id())))?;
        let prompt = prompts
            .remove(&id)
            .ok_or_else(|| Error::Integrity(format!("sidecar has no prompt for category {id}")))?;
        items.push((id, g.class_token().clone(), prompt));
    }
    if let Some(id) = prompts.keys().next() {
        return Err(Error::Integrity(format!("sidecar category {id} has no embedding")));
    }
    TextEmbeddingBank::new(sidecar.prompt, items)
}

pub fn write_bank(path: impl AsRef<Path>, bank: &TextEmbeddingBank, metadata: &FeatureMetadata) -> Result<()> {
    let path = path.as_ref();
    let mut grids = Vec::with_capacity(bank.len());
    let mut categories = Vec::with_capacity(bank.len());
    for (id, emb, prompt) in bank.iter() {
        grids.push(FeatureGrid::new(u64::from(id), 1, 1, emb.as_slice().to_vec(), emb.clone())?);
        categories.push(SidecarEntry {
            id,
            prompt: prompt.to_string(),
        });
    }
    write_feature_file(path, &grids, metadata)?;
    let sidecar = BankSidecar {
        prompt: bank.template(),
        categories,
    };
    write_json(&sidecar_path(path), &sidecar, true)
}
