//! Nearest-base retrieval, dense semantic correspondence and part-label
//! transfer.
//!
//! Given a novel image, the gallery entry whose class token is most
//! cosine-similar is taken as its nearest base object. Every novel grid cell
//! is then matched to the most similar cell of that base grid, and the base
//! part labels are gathered through the resulting map. All argmaxes break
//! ties toward the lowest index (lowest image id, first cell in row-major
//! order).

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_of_mask, BoundingBox, MaskBitmap};
use crate::math::{cosine_similarity, cosine_unchecked, norm, resample_grid_nearest, FeatureGrid, LabelGrid};
use crate::taxonomy::{CategoryId, Taxonomy};

/// One base object: its features, part labels at feature resolution and
/// object name.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    features: FeatureGrid,
    labels: LabelGrid,
    object_name: String,
}

impl GalleryEntry {
    pub fn new(features: FeatureGrid, labels: LabelGrid, object_name: impl Into<String>) -> Result<Self> {
        if features.shape() != labels.shape() {
            return Err(Error::dim(
                format!("label grid {:?}", features.shape()),
                format!("{:?}", labels.shape()),
            ));
        }
        let object_name = object_name.into();
        if object_name.trim().is_empty() {
            return Err(Error::InvalidName(object_name));
        }
        Ok(GalleryEntry {
            features,
            labels,
            object_name,
        })
    }

    pub fn image_id(&self) -> u64 {
        self.features.image_id()
    }

    pub fn features(&self) -> &FeatureGrid {
        &self.features
    }

    pub fn labels(&self) -> &LabelGrid {
        &self.labels
    }

    pub fn object_name(&self) -> &str {
        &self.object_name
    }
}

/// The searchable database of base objects, ordered by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaseGallery {
    entries: Vec<GalleryEntry>,
}

impl BaseGallery {
    pub fn new(mut entries: Vec<GalleryEntry>) -> Result<Self> {
        entries.sort_by_key(GalleryEntry::image_id);
        if let Some(w) = entries.windows(2).find(|w| w[0].image_id() == w[1].image_id()) {
            return Err(Error::Integrity(format!(
                "duplicate gallery image id {}",
                w[0].image_id()
            )));
        }
        if let Some(first) = entries.first() {
            let d = first.features.dim();
            if let Some(e) = entries.iter().find(|e| e.features.dim() != d) {
                return Err(Error::dim(
                    format!("feature dim {d}"),
                    format!("{} for image {}", e.features.dim(), e.image_id()),
                ));
            }
        }
        Ok(BaseGallery { entries })
    }

    /// Check that every nonzero label is a part category of `tax`.
    pub fn validate_labels(&self, tax: &Taxonomy) -> Result<()> {
        for e in &self.entries {
            let bad = e
                .labels
                .as_slice()
                .iter()
                .find(|&&l| l != 0 && !tax.is_part(l));
            if let Some(l) = bad {
                return Err(Error::UnknownCategory(format!(
                    "label {l} in gallery image {} is not a part category",
                    e.image_id()
                )));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn get(&self, image_id: u64) -> Option<&GalleryEntry> {
        self.entries
            .binary_search_by_key(&image_id, GalleryEntry::image_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.features.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestMatch {
    pub novel_image_id: u64,
    pub base_image_id: u64,
    pub similarity: f64,
}

/// Per-cell map from a novel grid into a base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    height: usize,
    width: usize,
    base_shape: (usize, usize),
    targets: Vec<(usize, usize)>,
    scores: Vec<f64>,
}

impl CorrespondenceMap {
    /// Build a map from explicit targets and scores (row-major, one per
    /// novel cell).
    pub fn from_parts(
        shape: (usize, usize),
        base_shape: (usize, usize),
        targets: Vec<(usize, usize)>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let (h, w) = shape;
        if h == 0 || w == 0 || base_shape.0 == 0 || base_shape.1 == 0 {
            return Err(Error::EmptyGrid);
        }
        if targets.len() != h * w || scores.len() != h * w {
            return Err(Error::dim(h * w, format!("{} targets / {} scores", targets.len(), scores.len())));
        }
        if let Some(t) = targets.iter().find(|t| t.0 >= base_shape.0 || t.1 >= base_shape.1) {
            return Err(Error::dim(format!("target within {base_shape:?}"), format!("{t:?}")));
        }
        if scores.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return Err(Error::CorruptData("correspondence score outside [-1, 1]".into()));
        }
        Ok(CorrespondenceMap {
            height: h,
            width: w,
            base_shape,
            targets,
            scores,
        })
    }

    pub fn identity(shape: (usize, usize)) -> Result<Self> {
        let (h, w) = shape;
        let targets = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
        CorrespondenceMap::from_parts(shape, shape, targets, vec![1.0; h * w])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn base_shape(&self) -> (usize, usize) {
        self.base_shape
    }

    pub fn target(&self, row: usize, col: usize) -> (usize, usize) {
        self.targets[row * self.width + col]
    }

    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }

    pub fn targets(&self) -> &[(usize, usize)] {
        &self.targets
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Gallery entry whose class token is most similar to the novel one.
pub fn find_nearest_base(novel: &FeatureGrid, gallery: &BaseGallery) -> Result<NearestMatch> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let query = novel.class_token();
    let mut best: Option<(u64, f64)> = None;
    for e in gallery.entries() {
        let token = e.features.class_token();
        // Validates dims and norms; the argmax itself runs on the unclamped value.
        cosine_similarity(query, token)?;
        let sim = cosine_unchecked(query.as_slice(), query.norm(), token.as_slice(), token.norm());
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((e.image_id(), sim));
        }
    }
    let (base_image_id, similarity) = best.expect("gallery is non-empty");
    Ok(NearestMatch {
        novel_image_id: novel.image_id(),
        base_image_id,
        similarity: similarity.clamp(-1.0, 1.0),
    })
}

fn cell_norms(g: &FeatureGrid) -> Result<Vec<f64>> {
    g.iter_cells()
        .enumerate()
        .map(|(i, cell)| {
            let n = norm(cell);
            if n == 0.0 {
                Err(Error::DegenerateVector(format!(
                    "zero feature vector at cell ({}, {}) of image {}",
                    i / g.width(),
                    i % g.width(),
                    g.image_id()
                )))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// For each novel cell, the base cell with the highest cosine similarity.
pub fn dense_correspondence(novel: &FeatureGrid, base: &FeatureGrid) -> Result<CorrespondenceMap> {
    if novel.dim() != base.dim() {
        return Err(Error::dim(novel.dim(), base.dim()));
    }
    let novel_norms = cell_norms(novel)?;
    let base_norms = cell_norms(base)?;
    let base_cells: Vec<&[f32]> = base.iter_cells().collect();
    let bw = base.width();

    let (targets, scores): (Vec<(usize, usize)>, Vec<f64>) = novel
        .cells()
        .par_chunks_exact(novel.dim())
        .zip(novel_norms.par_iter())
        .map(|(cell, &n)| {
            let mut best_idx = 0;
            let mut best = f64::NEG_INFINITY;
            for (j, (b, &bn)) in base_cells.iter().zip(&base_norms).enumerate() {
                let s = cosine_unchecked(cell, n, b, bn);
                if s > best {
                    best = s;
                    best_idx = j;
                }
            }
            ((best_idx / bw, best_idx % bw), best.clamp(-1.0, 1.0))
        })
        .unzip();

    CorrespondenceMap::from_parts(novel.shape(), base.shape(), targets, scores)
}

/// Gather base labels through a correspondence map; cells scoring below
/// `min_score` become background.
pub fn transfer_labels(corr: &CorrespondenceMap, base_labels: &LabelGrid, min_score: f64) -> Result<LabelGrid> {
    if base_labels.shape() != corr.base_shape() {
        return Err(Error::dim(
            format!("base labels {:?}", corr.base_shape()),
            format!("{:?}", base_labels.shape()),
        ));
    }
    let data = corr
        .targets
        .iter()
        .zip(&corr.scores)
        .map(|(&(p, q), &s)| if s >= min_score { base_labels.get(p, q) } else { 0 })
        .collect();
    LabelGrid::new(corr.height, corr.width, data)
}

/// A connected-by-label region lifted to image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PartInstance {
    pub part_id: CategoryId,
    pub mask: MaskBitmap,
    pub bbox: BoundingBox,
}

/// One instance per nonzero label, upsampled to `image_size` by nearest
/// resampling. Instances are ordered by label.
pub fn labelgrid_to_instances(lg: &LabelGrid, image_size: (usize, usize)) -> Result<Vec<PartInstance>> {
    let (h, w) = image_size;
    if h < lg.height() || w < lg.width() {
        return Err(Error::dim(
            format!("image at least {:?}", lg.shape()),
            format!("{image_size:?}"),
        ));
    }
    let present: HashSet<u32> = lg.as_slice().iter().copied().filter(|&l| l != 0).collect();
    if present.is_empty() {
        return Ok(Vec::new());
    }
    let up = resample_grid_nearest(lg, image_size)?;
    let mut masks: BTreeMap<u32, MaskBitmap> = BTreeMap::new();
    for (i, &l) in up.as_slice().iter().enumerate() {
        if l != 0 {
            masks
                .entry(l)
                .or_insert_with(|| MaskBitmap::empty(h, w).expect("non-empty image size"))
                .set(i / w, i % w, true);
        }
    }
    masks
        .into_iter()
        .map(|(part_id, mask)| {
            let bbox = bbox_of_mask(&mask)?;
            Ok(PartInstance { part_id, mask, bbox })
        })
        .collect()
}
