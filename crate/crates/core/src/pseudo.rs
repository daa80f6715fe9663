//! Pseudo part annotations for novel objects, and the baseline aligners.
//!
//! A novel image is parsed "as the way of" its nearest base object: retrieve
//! the base entry, build the dense correspondence, gather the base labels and
//! turn each transferred label into a box. Only boxes and category ids leave
//! this module; masks are intermediate.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::{
    dense_correspondence, find_nearest_base, labelgrid_to_instances, transfer_labels, BaseGallery, GalleryEntry,
    NearestMatch,
};
use crate::error::{Error, Result};
use crate::geometry::{rasterize_polygon, BoundingBox};
use crate::io::coco::{Annotation, AnnotationSet, DetectionSet, ImageInfo};
use crate::math::{cosine_unchecked, norm, resample_grid_nearest, Embedding, FeatureGrid, LabelGrid};
use crate::ovscore::TextEmbeddingBank;
use crate::taxonomy::{CategoryId, Taxonomy};

fn default_score() -> f64 {
    1.0
}

/// A precomputed region with its pooled feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub image_id: u64,
    pub bbox: BoundingBox,
    #[serde(default = "default_score")]
    pub score: f64,
    pub embedding: Embedding,
}

/// How transferred part labels are named.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamingMode {
    /// Keep the matched base object's part category.
    Base,
    /// Rename to the same part of the novel object when its class is known.
    #[default]
    Novel,
}

impl FromStr for NamingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(NamingMode::Base),
            "novel" => Ok(NamingMode::Novel),
            other => Err(Error::InvalidConfig(format!(
                "unknown naming mode {other:?} (expected base or novel)"
            ))),
        }
    }
}

impl fmt::Display for NamingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NamingMode::Base => "base",
            NamingMode::Novel => "novel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoAnnotation {
    pub image_id: u64,
    pub category_id: CategoryId,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    pub min_score: f64,
    pub naming: NamingMode,
    /// Route base-object images to detector predictions.
    pub hybrid: bool,
    /// Detector score threshold for base images in hybrid mode.
    pub tau: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            min_score: 0.0,
            naming: NamingMode::Novel,
            hybrid: false,
            tau: 0.5,
        }
    }
}

/// Output of parsing one novel image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageParse {
    pub nearest: NearestMatch,
    pub annotations: Vec<PseudoAnnotation>,
    /// Part keys that had no counterpart in the novel object.
    pub dropped: Vec<String>,
}

/// Build a gallery from base features and COCO part annotations.
///
/// Each image's part masks are painted at image resolution, largest first
/// (ties by annotation id) so smaller parts stay visible, then the label
/// raster is resampled to the feature-grid shape. Annotations of object
/// categories are skipped. The entry's object name is the image's `object`
/// field, or else the single object all of its parts belong to.
pub fn build_gallery(features: &[FeatureGrid], labels: &AnnotationSet, tax: &Taxonomy) -> Result<BaseGallery> {
    if features.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let mut by_image: HashMap<u64, Vec<&Annotation>> = HashMap::new();
    for a in &labels.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    let mut entries = Vec::with_capacity(features.len());
    for grid in features {
        let id = grid.image_id();
        let image = labels
            .image(id)
            .ok_or_else(|| Error::Integrity(format!("gallery labels have no image {id}")))?;
        let size = (image.height, image.width);
        let mut painted = Vec::new();
        let mut objects = Vec::new();
        for a in by_image.get(&id).map(Vec::as_slice).unwrap_or_default() {
            if !tax.contains(a.category_id) {
                return Err(Error::UnknownCategory(format!(
                    "annotation {} uses category {} not in the taxonomy",
                    a.id, a.category_id
                )));
            }
            let Some(part) = tax.part(a.category_id) else {
                continue;
            };
            let mask = match &a.segmentation {
                Some(seg) => seg.to_mask(size)?,
                None => {
                    let b = a.bbox;
                    rasterize_polygon(&[(b.x, b.y), (b.x + b.w, b.y), (b.x + b.w, b.y + b.h), (b.x, b.y + b.h)], size)?
                }
            };
            objects.push(part.object_name.clone());
            painted.push((mask.area(), a.id, a.category_id, mask));
        }
        objects.sort();
        objects.dedup();
        let object_name = match (&image.object, objects.as_slice()) {
            (Some(o), _) => o.clone(),
            (None, [one]) => one.clone(),
            _ => {
                return Err(Error::Integrity(format!(
                    "cannot tell which object gallery image {id} shows; set its \"object\" field"
                )))
            }
        };
        if let Some(other) = objects.iter().find(|o| **o != object_name) {
            return Err(Error::Integrity(format!(
                "gallery image {id} shows {object_name:?} but is labeled with parts of {other:?}"
            )));
        }
        painted.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut raster = LabelGrid::filled(size.0, size.1, 0)?;
        for (_, _, cat, mask) in &painted {
            for r in 0..size.0 {
                for c in 0..size.1 {
                    if mask.get(r, c) {
                        raster.set(r, c, *cat);
                    }
                }
            }
        }
        let grid_labels = resample_grid_nearest(&raster, grid.shape())?;
        entries.push(GalleryEntry::new(grid.clone(), grid_labels, object_name)?);
    }
    BaseGallery::new(entries)
}

/// Parse one novel image through its nearest base object.
///
/// `image` supplies the pixel size and, when set, the novel object's name
/// used for [`NamingMode::Novel`]. Novel objects absent from the taxonomy
/// keep the base object's part ids.
pub fn parse_novel_image(
    novel: &FeatureGrid,
    image: &ImageInfo,
    gallery: &BaseGallery,
    tax: &Taxonomy,
    opts: &ParseOptions,
) -> Result<ImageParse> {
    let nearest = find_nearest_base(novel, gallery)?;
    let base = gallery
        .get(nearest.base_image_id)
        .ok_or(Error::EmptyGallery)?;
    let corr = dense_correspondence(novel, base.features())?;
    let labels = transfer_labels(&corr, base.labels(), opts.min_score)?;
    let instances = labelgrid_to_instances(&labels, (image.height, image.width))?;

    let target_object = match (opts.naming, &image.object) {
        (NamingMode::Novel, Some(o)) if tax.object(o).is_some() => Some(o.as_str()),
        _ => None,
    };
    let mut annotations = Vec::with_capacity(instances.len());
    let mut dropped = Vec::new();
    for inst in instances {
        let part = tax.part(inst.part_id).ok_or_else(|| {
            Error::UnknownCategory(format!(
                "label {} of gallery image {} is not a part category",
                inst.part_id,
                base.image_id()
            ))
        })?;
        let category_id = match target_object {
            None => part.id,
            Some(o) if o == part.object_name => part.id,
            Some(o) => match tax.part_by_key(o, &part.part_name) {
                Some(p) => p.id,
                None => {
                    dropped.push(format!("{o}: {}", part.part_name));
                    continue;
                }
            },
        };
        annotations.push(PseudoAnnotation {
            image_id: image.id,
            category_id,
            bbox: inst.bbox,
            score: None,
        });
    }
    Ok(ImageParse {
        nearest,
        annotations,
        dropped,
    })
}

/// A full parsing job's result, ready to be written as COCO JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseReport {
    pub annotations: AnnotationSet,
    pub matches: Vec<NearestMatch>,
    pub dropped: Vec<(u64, String)>,
}

/// True when the hybrid parser sends this image to detector predictions:
/// its object has at least one part in the base split.
pub fn is_base_image(image: &ImageInfo, tax: &Taxonomy) -> bool {
    let (Some(o), Some(split)) = (&image.object, tax.split()) else {
        return false;
    };
    tax.parts().iter().any(|p| &p.object_name == o && split.is_base(p.id))
}

fn clip_box(b: BoundingBox, image: &ImageInfo) -> BoundingBox {
    let (w, h) = (image.width as f64, image.height as f64);
    let x0 = b.x.clamp(0.0, w);
    let y0 = b.y.clamp(0.0, h);
    let x1 = (b.x + b.w).clamp(0.0, w);
    let y1 = (b.y + b.h).clamp(0.0, h);
    BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
}

type ImageOutcome = (Vec<PseudoAnnotation>, Option<NearestMatch>, Vec<String>);

/// Parse a batch of images.
///
/// Without `images`, every novel grid is parsed at its own grid size with no
/// object name. With `images`, the manifest drives the batch: in hybrid mode
/// base-object images take `predictions` with `score >= tau` (clipped to the
/// image), everything else is parsed from `novel`. Output is ordered by
/// image id with annotation ids numbered from 1, independent of how many
/// worker threads run.
pub fn run_parse(
    novel: &[FeatureGrid],
    images: Option<&[ImageInfo]>,
    gallery: &BaseGallery,
    tax: &Taxonomy,
    predictions: Option<&DetectionSet>,
    opts: &ParseOptions,
) -> Result<ParseReport> {
    if opts.hybrid && tax.split().is_none() {
        return Err(Error::InvalidConfig("hybrid parsing needs a taxonomy with a base/novel split".into()));
    }
    let mut grids: BTreeMap<u64, &FeatureGrid> = BTreeMap::new();
    for g in novel {
        if grids.insert(g.image_id(), g).is_some() {
            return Err(Error::Integrity(format!("duplicate novel image id {}", g.image_id())));
        }
    }
    let manifest: Vec<ImageInfo> = match images {
        Some(list) => {
            let mut list = list.to_vec();
            list.sort_by_key(|im| im.id);
            if let Some(w) = list.windows(2).find(|w| w[0].id == w[1].id) {
                return Err(Error::Integrity(format!("duplicate image id {} in manifest", w[0].id)));
            }
            list
        }
        None if opts.hybrid => {
            return Err(Error::InvalidConfig(
                "hybrid parsing needs an image manifest naming each image's object".into(),
            ))
        }
        None => grids
            .values()
            .map(|g| ImageInfo::new(g.image_id(), g.height(), g.width()))
            .collect(),
    };
    for id in grids.keys() {
        if !manifest.iter().any(|im| im.id == *id) {
            return Err(Error::Integrity(format!("novel features for image {id} have no manifest entry")));
        }
    }

    let mut by_image: HashMap<u64, Vec<&crate::io::coco::Detection>> = HashMap::new();
    if let Some(p) = predictions {
        for d in &p.detections {
            if !tax.contains(d.category_id) {
                return Err(Error::Vocabulary(format!(
                    "prediction category {} is not in the taxonomy",
                    d.category_id
                )));
            }
            by_image.entry(d.image_id).or_default().push(d);
        }
    }

    let per_image: Vec<Result<ImageOutcome>> = manifest
        .par_iter()
        .map(|image| {
            if opts.hybrid && is_base_image(image, tax) {
                if predictions.is_none() {
                    return Err(Error::MissingPredictions(image.id));
                }
                let mut anns: Vec<PseudoAnnotation> = by_image
                    .get(&image.id)
                    .map(Vec::as_slice)
                    .unwrap_or_default()
                    .iter()
                    .filter(|d| d.score >= opts.tau)
                    .map(|d| PseudoAnnotation {
                        image_id: image.id,
                        category_id: d.category_id,
                        bbox: clip_box(d.bbox, image),
                        score: Some(d.score),
                    })
                    .filter(|a| a.bbox.area() > 0.0)
                    .collect();
                anns.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()));
                return Ok((anns, None, Vec::new()));
            }
            let grid = grids
                .get(&image.id)
                .ok_or_else(|| Error::Integrity(format!("no novel features for image {}", image.id)))?;
            let parsed = parse_novel_image(grid, image, gallery, tax, opts)?;
            Ok((parsed.annotations, Some(parsed.nearest), parsed.dropped))
        })
        .collect();

    let mut out = AnnotationSet {
        images: manifest.clone(),
        annotations: Vec::new(),
        categories: AnnotationSet::categories_from(tax),
    };
    let mut matches = Vec::new();
    let mut dropped = Vec::new();
    for (image, res) in manifest.iter().zip(per_image) {
        let (anns, nearest, lost) = res?;
        matches.extend(nearest);
        dropped.extend(lost.into_iter().map(|k| (image.id, k)));
        for a in anns {
            let id = out.annotations.len() as u64 + 1;
            out.annotations.push(Annotation {
                id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox,
                segmentation: None,
                area: Some(a.bbox.area()),
                iscrowd: 0,
                score: a.score,
            });
        }
    }
    Ok(ParseReport {
        annotations: out,
        matches,
        dropped,
    })
}

/// Chosen proposal of an aligner and the value it won with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment<'a> {
    pub index: usize,
    pub proposal: &'a RegionProposal,
    pub value: f64,
}

/// Proposal whose embedding is most cosine-similar to the target part's
/// text embedding; ties go to the lowest index.
pub fn align_max_score<'a>(
    proposals: &'a [RegionProposal],
    target_part_id: CategoryId,
    bank: &TextEmbeddingBank,
) -> Result<Alignment<'a>> {
    if proposals.is_empty() {
        return Err(Error::NoProposal);
    }
    let text = bank
        .embedding(target_part_id)
        .ok_or_else(|| Error::Vocabulary(format!("no text embedding for category {target_part_id}")))?
        .as_slice();
    let nt = norm(text);
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in proposals.iter().enumerate() {
        let e = p.embedding.as_slice();
        if e.len() != text.len() {
            return Err(Error::dim(format!("proposal dim {}", text.len()), e.len()));
        }
        let ne = norm(e);
        if ne == 0.0 {
            return Err(Error::DegenerateVector(format!("proposal {i} has a zero embedding")));
        }
        let s = cosine_unchecked(e, ne, text, nt);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (index, value) = best.unwrap();
    Ok(Alignment {
        index,
        proposal: &proposals[index],
        value: value.clamp(-1.0, 1.0),
    })
}

/// Proposal with the largest box area; ties go to the lowest index. The
/// target part plays no role, so every part gets the same proposal.
pub fn align_max_size(proposals: &[RegionProposal], _target_part_id: CategoryId) -> Result<Alignment<'_>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in proposals.iter().enumerate() {
        let a = p.bbox.area();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    let (index, value) = best.ok_or(Error::NoProposal)?;
    Ok(Alignment {
        index,
        proposal: &proposals[index],
        value,
    })
}
