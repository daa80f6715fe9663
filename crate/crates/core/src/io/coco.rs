//! COCO annotation and result documents.
//!
//! Readers enforce referential integrity and reject rather than repair.
//! Polygon segmentations are kept as polygons and rasterized on demand;
//! RLE segmentations are kept as uncompressed counts. Compressed RLE strings
//! are accepted on input and decoded to counts.

use std::collections::{HashMap, HashSet};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rasterize_polygons, rle_decode, rle_from_compressed, BoundingBox, MaskBitmap, RleMask};
use crate::taxonomy::{CategoryId, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    /// Object category shown in the image, when known. Drives category
    /// remapping and base/novel routing in the parsers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

impl ImageInfo {
    pub fn new(id: u64, height: usize, width: usize) -> Self {
        ImageInfo {
            id,
            width,
            height,
            file_name: None,
            object: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SegmentationRepr {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [usize; 2], counts: Vec<u32> },
    Compressed { size: [usize; 2], counts: String },
}

/// Instance segmentation in either COCO form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentationRepr", into = "SegmentationRepr")]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(RleMask),
}

impl TryFrom<SegmentationRepr> for Segmentation {
    type Error = Error;

    fn try_from(r: SegmentationRepr) -> Result<Self> {
        Ok(match r {
            SegmentationRepr::Polygons(p) => Segmentation::Polygons(p),
            SegmentationRepr::Rle { size, counts } => Segmentation::Rle(RleMask { size, counts }),
            SegmentationRepr::Compressed { size, counts } => {
                Segmentation::Rle(rle_from_compressed(&counts, size[0], size[1])?)
            }
        })
    }
}

impl From<Segmentation> for SegmentationRepr {
    fn from(s: Segmentation) -> Self {
        match s {
            Segmentation::Polygons(p) => SegmentationRepr::Polygons(p),
            Segmentation::Rle(r) => SegmentationRepr::Rle {
                size: r.size,
                counts: r.counts,
            },
        }
    }
}

impl Segmentation {
    /// Materialize at `(height, width)`.
    pub fn to_mask(&self, size: (usize, usize)) -> Result<MaskBitmap> {
        match self {
            Segmentation::Polygons(p) => rasterize_polygons(p, size),
            Segmentation::Rle(r) => {
                if (r.height(), r.width()) != size {
                    return Err(Error::dim(format!("{size:?}"), format!("RLE size {:?}", r.size)));
                }
                rle_decode(r)
            }
        }
    }

    fn check(&self, image: &ImageInfo) -> Result<()> {
        match self {
            Segmentation::Polygons(polys) => {
                if polys.is_empty() {
                    return Err(Error::Integrity("empty polygon list".into()));
                }
                for p in polys {
                    if p.len() < 6 || p.len() % 2 != 0 || p.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidPolygon(format!(
                            "polygon with {} coordinates",
                            p.len()
                        )));
                    }
                }
                Ok(())
            }
            Segmentation::Rle(r) => {
                if (r.height(), r.width()) != (image.height, image.width) {
                    return Err(Error::Integrity(format!(
                        "RLE size {:?} does not match image {} ({}x{})",
                        r.size, image.id, image.height, image.width
                    )));
                }
                r.validate()
            }
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Segmentation::Polygons(polys) => polys.iter().all(|p| polygon_area(p) == 0.0),
            Segmentation::Rle(r) => r.area() == 0,
        }
    }
}

fn polygon_area(flat: &[f64]) -> f64 {
    let n = flat.len() / 2;
    let mut twice = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        twice += flat[2 * i] * flat[2 * j + 1] - flat[2 * j] * flat[2 * i + 1];
    }
    twice.abs() / 2.0
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: CategoryId,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Annotation {
    pub fn is_crowd(&self) -> bool {
        self.iscrowd != 0
    }
}

/// A COCO ground-truth (or pseudo-annotation) document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    #[serde(default)]
    pub categories: Vec<CategoryInfo>,
}

impl AnnotationSet {
    /// Enforce unique ids, referential integrity, valid boxes and nonempty
    /// masks.
    pub fn validate(&self) -> Result<()> {
        let mut images = HashMap::new();
        for im in &self.images {
            if im.width == 0 || im.height == 0 {
                return Err(Error::Integrity(format!("image {} has zero size", im.id)));
            }
            if images.insert(im.id, im).is_some() {
                return Err(Error::Integrity(format!("duplicate image id {}", im.id)));
            }
        }
        let mut cats = HashSet::new();
        for c in &self.categories {
            if !cats.insert(c.id) {
                return Err(Error::Integrity(format!("duplicate category id {}", c.id)));
            }
        }
        let mut ann_ids = HashSet::new();
        for a in &self.annotations {
            if !ann_ids.insert(a.id) {
                return Err(Error::Integrity(format!("duplicate annotation id {}", a.id)));
            }
            let Some(image) = images.get(&a.image_id) else {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing image {}",
                    a.id, a.image_id
                )));
            };
            if !cats.contains(&a.category_id) {
                return Err(Error::Integrity(format!(
                    "annotation {} references missing category {}",
                    a.id, a.category_id
                )));
            }
            if !a.bbox.is_valid() {
                return Err(Error::Integrity(format!("annotation {} has an invalid bbox", a.id)));
            }
            if a.score.is_some_and(|s| !s.is_finite()) {
                return Err(Error::CorruptData(format!("annotation {} has a non-finite score", a.id)));
            }
            if let Some(seg) = &a.segmentation {
                seg.check(image)?;
                if seg.is_empty() {
                    return Err(Error::Integrity(format!("annotation {} has an empty mask", a.id)));
                }
            }
        }
        Ok(())
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn category_ids(&self) -> HashSet<CategoryId> {
        self.categories.iter().map(|c| c.id).collect()
    }

    /// Categories of a taxonomy in COCO form, ordered by id.
    pub fn categories_from(tax: &Taxonomy) -> Vec<CategoryInfo> {
        tax.categories()
            .into_iter()
            .map(|(id, name)| CategoryInfo { id, name })
            .collect()
    }
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: CategoryId,
    pub bbox: BoundingBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
}

/// Predictions in COCO results form; serialized as a bare JSON list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(detections: Vec<Detection>) -> Self {
        DetectionSet { detections }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.detections.iter().enumerate() {
            if !d.score.is_finite() {
                return Err(Error::CorruptData(format!("detection {i} has a non-finite score")));
            }
            if !d.bbox.is_valid() {
                return Err(Error::Integrity(format!("detection {i} has an invalid bbox")));
            }
            if let Some(Segmentation::Rle(r)) = &d.segmentation {
                r.validate()?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = if pretty {
        serde_json::to_writer_pretty(&mut w, value)
    } else {
        serde_json::to_writer(&mut w, value)
    };
    res.map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_coco(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let set: AnnotationSet = read_json(path.as_ref())?;
    set.validate()?;
    Ok(set)
}

pub fn write_coco(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), set, false)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let set: DetectionSet = read_json(path.as_ref())?;
    set.validate()?;
    Ok(set)
}

pub fn write_results(set: &DetectionSet, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), set, false)
}
