//! COCO-style AP/AR for part boxes and masks, with base/novel split
//! aggregates.
//!
//! Matching follows the COCO protocol: per image and category, detections
//! (at most `max_dets`, best first) are matched greedily at each IoU
//! threshold; crowd ground truth is ignored and overlaps with it are measured
//! relative to the detection's own area. Score ties are broken by detection
//! input order everywhere.

mod ap;
mod matching;
mod recall;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ap::{average_precision, average_precision_at};
pub use matching::{match_greedy, DetOutcome};
pub use recall::{average_recall, recall_curve, RecallAt};
pub use report::{Aggregate, CategoryEval, EvalReport, SplitTag};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, MaskBitmap};
use crate::io::coco::{AnnotationSet, DetectionSet};
use crate::taxonomy::{CategoryId, TaxonomySplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouType {
    #[default]
    Box,
    Mask,
}

impl fmt::Display for IouType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IouType::Box => "box",
            IouType::Mask => "mask",
        })
    }
}

impl FromStr for IouType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" | "bbox" => Ok(IouType::Box),
            "mask" | "segm" => Ok(IouType::Mask),
            other => Err(Error::InvalidConfig(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    /// Detections kept per image and category, best first.
    pub max_dets: usize,
    /// Treat crowd annotations as ignore regions. When off they count as
    /// ordinary ground truth.
    pub use_crowd: bool,
    pub recall_ks: Vec<usize>,
    pub recall_iou: f64,
}

/// `.50:.05:.95`, computed the way the reference tooling does.
pub fn coco_iou_thresholds() -> Vec<f64> {
    let step = (0.95 - 0.5) / 9.0;
    let mut t: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * step).collect();
    t[9] = 0.95;
    t
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            iou_thresholds: coco_iou_thresholds(),
            recall_points: 101,
            max_dets: 100,
            use_crowd: true,
            recall_ks: vec![30, 100, 300, 1000],
            recall_iou: 0.5,
        }
    }
}

enum Shape {
    Box(BoundingBox),
    Mask(MaskBitmap, usize),
}

impl Shape {
    fn area(&self) -> f64 {
        match self {
            Shape::Box(b) => b.area(),
            Shape::Mask(_, a) => *a as f64,
        }
    }

    /// Overlap of detection `self` with ground truth `g`; against crowd
    /// ground truth the union is the detection's area.
    fn iou(&self, g: &Shape, crowd: bool) -> f64 {
        let inter = match (self, g) {
            (Shape::Box(a), Shape::Box(b)) => a.intersection_area(b),
            (Shape::Mask(a, _), Shape::Mask(b, _)) => {
                a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count() as f64
            }
            _ => unreachable!("mixed shapes"),
        };
        let union = if crowd { self.area() } else { self.area() + g.area() - inter };
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Per (image, category) inputs: ranked detections and ground truth.
struct Cell {
    dets: Vec<(f64, usize)>,
    ious: Vec<Vec<f64>>,
    gt_ignore: Vec<bool>,
}

fn approx(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Evaluate `dets` against `gt`.
///
/// Every category listed in `gt` is evaluated; those without non-ignored
/// ground truth get no AP and are left out of every mean. With a split,
/// base and novel aggregates cover the categories in each set; split ids
/// the ground truth does not list are ignored.
pub fn evaluate(
    gt: &AnnotationSet,
    dets: &DetectionSet,
    mode: IouType,
    split: Option<&TaxonomySplit>,
    params: &EvalParams,
) -> Result<EvalReport> {
    if params.iou_thresholds.is_empty() || params.max_dets == 0 {
        return Err(Error::InvalidConfig("need at least one IoU threshold and max_dets >= 1".into()));
    }
    let cat_ids = gt.category_ids();
    let images: HashMap<u64, (usize, usize)> = gt.images.iter().map(|im| (im.id, (im.height, im.width))).collect();
    for (i, d) in dets.detections.iter().enumerate() {
        if !cat_ids.contains(&d.category_id) {
            return Err(Error::Vocabulary(format!(
                "detection {i} has category {} absent from the ground truth",
                d.category_id
            )));
        }
        if !images.contains_key(&d.image_id) {
            return Err(Error::Integrity(format!("detection {i} refers to unknown image {}", d.image_id)));
        }
    }

    let shape_of = |bbox: BoundingBox, seg: Option<&crate::io::coco::Segmentation>, image_id: u64, what: &str| {
        Ok::<_, Error>(match mode {
            IouType::Box => Shape::Box(bbox),
            IouType::Mask => {
                let seg = seg.ok_or_else(|| Error::Integrity(format!("{what} has no segmentation for mask evaluation")))?;
                let m = seg.to_mask(images[&image_id])?;
                let a = m.area();
                Shape::Mask(m, a)
            }
        })
    };

    let mut gt_cells: BTreeMap<(CategoryId, u64), Vec<(Shape, bool)>> = BTreeMap::new();
    for a in &gt.annotations {
        let ignore = params.use_crowd && a.is_crowd();
        let s = shape_of(a.bbox, a.segmentation.as_ref(), a.image_id, &format!("annotation {}", a.id))?;
        gt_cells.entry((a.category_id, a.image_id)).or_default().push((s, ignore));
    }
    let mut det_cells: BTreeMap<(CategoryId, u64), Vec<(f64, usize)>> = BTreeMap::new();
    for (i, d) in dets.detections.iter().enumerate() {
        det_cells.entry((d.category_id, d.image_id)).or_default().push((d.score, i));
    }
    let mut det_shapes: HashMap<usize, Shape> = HashMap::new();
    for ranked in det_cells.values_mut() {
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.truncate(params.max_dets);
        for &(_, i) in ranked.iter() {
            let d = &dets.detections[i];
            det_shapes.insert(i, shape_of(d.bbox, d.segmentation.as_ref(), d.image_id, &format!("detection {i}"))?);
        }
    }

    let mut cats: Vec<_> = gt.categories.iter().collect();
    cats.sort_by_key(|c| c.id);
    let empty_gt = Vec::new();
    let empty_det = Vec::new();
    let per_cat: Vec<CategoryEval> = cats
        .par_iter()
        .map(|cat| {
            let keys: std::collections::BTreeSet<u64> = gt_cells
                .range((cat.id, 0)..=(cat.id, u64::MAX))
                .map(|(k, _)| k.1)
                .chain(det_cells.range((cat.id, 0)..=(cat.id, u64::MAX)).map(|(k, _)| k.1))
                .collect();
            let mut n_gt = 0;
            let cells: Vec<Cell> = keys
                .into_iter()
                .map(|image_id| {
                    let g = gt_cells.get(&(cat.id, image_id)).unwrap_or(&empty_gt);
                    let d = det_cells.get(&(cat.id, image_id)).unwrap_or(&empty_det);
                    n_gt += g.iter().filter(|(_, ig)| !ig).count();
                    let ious = d
                        .iter()
                        .map(|&(_, i)| g.iter().map(|(s, ig)| det_shapes[&i].iou(s, *ig)).collect())
                        .collect();
                    Cell {
                        dets: d.clone(),
                        ious,
                        gt_ignore: g.iter().map(|(_, ig)| *ig).collect(),
                    }
                })
                .collect();

            let ap_per_iou: Vec<f64> = if n_gt == 0 {
                Vec::new()
            } else {
                params
                    .iou_thresholds
                    .iter()
                    .map(|&t| {
                        let thr = t.min(1.0 - 1e-10);
                        let mut scored: Vec<(f64, usize, bool)> = Vec::new();
                        for c in &cells {
                            for (&(score, idx), outcome) in c.dets.iter().zip(match_greedy(&c.ious, &c.gt_ignore, thr)) {
                                match outcome {
                                    DetOutcome::Ignored => {}
                                    DetOutcome::TruePositive(_) => scored.push((score, idx, true)),
                                    DetOutcome::FalsePositive => scored.push((score, idx, false)),
                                }
                            }
                        }
                        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                        let tps: Vec<bool> = scored.iter().map(|s| s.2).collect();
                        average_precision_at(&tps, n_gt, params.recall_points)
                    })
                    .collect()
            };
            let at = |t: f64| {
                params
                    .iou_thresholds
                    .iter()
                    .position(|&x| approx(x, t))
                    .and_then(|i| ap_per_iou.get(i).copied())
            };
            let ap = (!ap_per_iou.is_empty()).then(|| ap_per_iou.iter().sum::<f64>() / ap_per_iou.len() as f64);
            CategoryEval {
                id: cat.id,
                name: cat.name.clone(),
                split: split.and_then(|s| {
                    if s.is_base(cat.id) {
                        Some(SplitTag::Base)
                    } else if s.is_novel(cat.id) {
                        Some(SplitTag::Novel)
                    } else {
                        None
                    }
                }),
                n_gt,
                ap50: at(0.5),
                ap75: at(0.75),
                ap,
                ap_per_iou,
            }
        })
        .collect();

    let all = Aggregate::over(per_cat.iter());
    let (base, novel) = match split {
        Some(_) => (
            Some(Aggregate::over(per_cat.iter().filter(|c| c.split == Some(SplitTag::Base)))),
            Some(Aggregate::over(per_cat.iter().filter(|c| c.split == Some(SplitTag::Novel)))),
        ),
        None => (None, None),
    };
    Ok(EvalReport {
        mode,
        iou_thresholds: params.iou_thresholds.clone(),
        categories: per_cat,
        all,
        base,
        novel,
        recall: recall_curve(gt, dets, &params.recall_ks, params.recall_iou),
    })
}
