//! Open-vocabulary region classification against text embeddings.
//!
//! Logits are cosine similarities divided by a temperature; probabilities
//! are their softmax over the categories of a [`TextEmbeddingBank`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::coco::{Detection, DetectionSet};
use crate::math::{cosine_unchecked, l2_normalize, norm, Embedding};
use crate::pseudo::RegionProposal;
use crate::taxonomy::{render_object_prompt, render_prompt, CategoryId, PromptSelection, PromptTemplate, Taxonomy};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
struct BankEntry {
    embedding: Embedding,
    prompt: String,
}

/// Unit-normalized text embeddings keyed by category id.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingBank {
    template: PromptTemplate,
    dim: usize,
    entries: BTreeMap<CategoryId, BankEntry>,
}

impl TextEmbeddingBank {
    /// Build a bank from `(category id, embedding, rendered prompt)` triples.
    /// Embeddings are normalized here.
    pub fn new(template: PromptTemplate, items: impl IntoIterator<Item = (CategoryId, Embedding, String)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut dim = None;
        for (id, emb, prompt) in items {
            match dim {
                None => dim = Some(emb.dim()),
                Some(d) if d != emb.dim() => {
                    return Err(Error::dim(format!("bank dim {d}"), format!("{} for category {id}", emb.dim())))
                }
                _ => {}
            }
            let embedding = l2_normalize(&emb)?;
            if entries.insert(id, BankEntry { embedding, prompt }).is_some() {
                return Err(Error::Integrity(format!("duplicate bank entry for category {id}")));
            }
        }
        let Some(dim) = dim else {
            return Err(Error::Vocabulary("embedding bank is empty".into()));
        };
        Ok(TextEmbeddingBank { template, dim, entries })
    }

    pub fn template(&self) -> PromptTemplate {
        self.template
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.entries.keys().copied()
    }

    pub fn embedding(&self, id: CategoryId) -> Option<&Embedding> {
        self.entries.get(&id).map(|e| &e.embedding)
    }

    pub fn prompt(&self, id: CategoryId) -> Option<&str> {
        self.entries.get(&id).map(|e| e.prompt.as_str())
    }

    /// Entries as `(id, embedding, prompt)`, ordered by id.
    pub fn iter(&self) -> impl Iterator<Item = (CategoryId, &Embedding, &str)> {
        self.entries.iter().map(|(&id, e)| (id, &e.embedding, e.prompt.as_str()))
    }

    /// The prompt a category should carry under `template`.
    pub fn expected_prompt(tax: &Taxonomy, id: CategoryId, template: PromptTemplate) -> Result<String> {
        if let Some(p) = tax.part(id) {
            return render_prompt(template, &p.object_name, &p.part_name);
        }
        match tax.objects().iter().find(|o| o.id == id) {
            Some(o) => render_object_prompt(&o.name),
            None => Err(Error::Vocabulary(format!("bank category {id} is not in the taxonomy"))),
        }
    }

    /// Every id must exist in `tax` and carry the prompt its template renders.
    pub fn validate_against(&self, tax: &Taxonomy) -> Result<()> {
        for (&id, e) in &self.entries {
            let want = Self::expected_prompt(tax, id, self.template)?;
            if want != e.prompt {
                return Err(Error::Vocabulary(format!(
                    "bank prompt for category {id} is {:?}, expected {want:?}",
                    e.prompt
                )));
            }
        }
        Ok(())
    }

    /// Keep only the selected categories. Every selected id must be present.
    pub fn restrict(&self, selection: &PromptSelection) -> Result<Self> {
        let ids = selection.category_ids();
        if ids.is_empty() {
            return Err(Error::Vocabulary("prompt selected no categories".into()));
        }
        let mut entries = BTreeMap::new();
        for id in ids {
            let e = self
                .entries
                .get(&id)
                .ok_or_else(|| Error::Vocabulary(format!("category {id} has no text embedding in the bank")))?;
            entries.insert(id, e.clone());
        }
        Ok(TextEmbeddingBank {
            template: self.template,
            dim: self.dim,
            entries,
        })
    }
}

/// Softmax of `cosine / temperature` over the bank, ordered by category id.
pub fn score_region(region: &Embedding, bank: &TextEmbeddingBank, temperature: f64) -> Result<Vec<(CategoryId, f64)>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidTemperature(temperature));
    }
    if region.dim() != bank.dim {
        return Err(Error::dim(format!("region dim {}", bank.dim), region.dim()));
    }
    let r = region.as_slice();
    let nr = norm(r);
    if nr == 0.0 {
        return Err(Error::DegenerateVector("region embedding has zero norm".into()));
    }
    let logits: Vec<(CategoryId, f64)> = bank
        .entries
        .iter()
        .map(|(&id, e)| {
            let t = e.embedding.as_slice();
            (id, cosine_unchecked(r, nr, t, norm(t)) / temperature)
        })
        .collect();
    let max = logits.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&(_, l)| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(logits.iter().zip(exps).map(|(&(id, _), e)| (id, e / total)).collect())
}

/// Label each region with its most probable category.
///
/// Ties go to the lowest category id. Results are grouped by image id, sorted
/// by score descending (ties by input order), filtered to
/// `score >= min_score` and truncated to `top_k` per image.
pub fn classify_detections(
    regions: &[RegionProposal],
    bank: &TextEmbeddingBank,
    temperature: f64,
    top_k: usize,
    min_score: f64,
) -> Result<DetectionSet> {
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    let mut scored = Vec::with_capacity(regions.len());
    for (idx, region) in regions.iter().enumerate() {
        let probs = score_region(&region.embedding, bank, temperature)?;
        let mut best = probs[0];
        for &p in &probs[1..] {
            if p.1 > best.1 {
                best = p;
            }
        }
        scored.push((region.image_id, best.1, idx, best.0));
    }
    scored.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));

    let mut out = Vec::new();
    let mut current = None;
    let mut kept = 0;
    for (image_id, score, idx, category_id) in scored {
        if current != Some(image_id) {
            current = Some(image_id);
            kept = 0;
        }
        if kept == top_k || score < min_score {
            continue;
        }
        kept += 1;
        out.push(Detection {
            image_id,
            category_id,
            bbox: regions[idx].bbox,
            score,
            segmentation: None,
        });
    }
    Ok(DetectionSet::new(out))
}
