//! Brute-force COCO-style evaluator written from the protocol definition.
//!
//! Interpolated precision at recall level r is taken literally as the
//! maximum precision over all ranks whose recall is at least r; IoUs and mask
//! decoding are computed here from raw fields.

use std::collections::{BTreeMap, BTreeSet};

use ovparts::io::coco::{AnnotationSet, DetectionSet, Segmentation};

const THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub per_category: BTreeMap<u32, f64>,
    pub map: Option<f64>,
    pub base: Option<f64>,
    pub novel: Option<f64>,
}

#[derive(Clone)]
enum Region {
    Rect([f64; 4]),
    Pixels(Vec<bool>),
}

fn decode(seg: &Segmentation) -> Vec<bool> {
    let Segmentation::Rle(r) = seg else {
        panic!("reference evaluator only reads RLE masks");
    };
    let (h, w) = (r.size[0], r.size[1]);
    let mut col_major = Vec::with_capacity(h * w);
    let mut value = false;
    for &c in &r.counts {
        col_major.extend(std::iter::repeat_n(value, c as usize));
        value = !value;
    }
    // Reorder to row-major so both region kinds index the same way.
    let mut row_major = vec![false; h * w];
    for (k, v) in col_major.into_iter().enumerate() {
        row_major[(k % h) * w + k / h] = v;
    }
    row_major
}

fn area(r: &Region) -> f64 {
    match r {
        Region::Rect(b) => b[2] * b[3],
        Region::Pixels(p) => p.iter().filter(|&&x| x).count() as f64,
    }
}

fn overlap(det: &Region, gt: &Region, crowd: bool) -> f64 {
    let inter = match (det, gt) {
        (Region::Rect(a), Region::Rect(b)) => {
            let iw = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
            let ih = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
            if iw <= 0.0 || ih <= 0.0 {
                0.0
            } else {
                iw * ih
            }
        }
        (Region::Pixels(a), Region::Pixels(b)) => (0..a.len()).filter(|&i| a[i] && b[i]).count() as f64,
        _ => panic!("mixed region kinds"),
    };
    let union = if crowd { area(det) } else { area(det) + area(gt) - inter };
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn interpolated_ap(records: &mut [(f64, usize, bool)], n_gt: usize) -> f64 {
    records.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut curve = Vec::new();
    let mut tp = 0.0;
    for (rank, rec) in records.iter().enumerate() {
        if rec.2 {
            tp += 1.0;
        }
        curve.push((tp / n_gt as f64, tp / (rank + 1) as f64));
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        // The reference recall grid is built as r * 0.01.
        let level = r as f64 * 0.01;
        let best = curve
            .iter()
            .filter(|(rec, _)| *rec >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn oracle_evaluate(
    gt: &AnnotationSet,
    dets: &DetectionSet,
    masks: bool,
    split: Option<(&BTreeSet<u32>, &BTreeSet<u32>)>,
    use_crowd: bool,
    max_dets: usize,
) -> OracleReport {
    let region_of = |bbox: [f64; 4], seg: Option<&Segmentation>| {
        if masks {
            Region::Pixels(decode(seg.expect("mask fixtures carry segmentations")))
        } else {
            Region::Rect(bbox)
        }
    };
    let mut report = OracleReport::default();
    for cat in &gt.categories {
        let c = cat.id;
        let mut n_gt = 0;
        for a in gt.annotations.iter().filter(|a| a.category_id == c) {
            if !(use_crowd && a.iscrowd == 1) {
                n_gt += 1;
            }
        }
        if n_gt == 0 {
            continue;
        }
        let mut per_threshold = Vec::new();
        for t in THRESHOLDS {
            let mut records = Vec::new();
            for im in &gt.images {
                let gts: Vec<(Region, bool)> = gt
                    .annotations
                    .iter()
                    .filter(|a| a.category_id == c && a.image_id == im.id)
                    .map(|a| {
                        let b = [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h];
                        (region_of(b, a.segmentation.as_ref()), use_crowd && a.iscrowd == 1)
                    })
                    .collect();
                let mut mine: Vec<usize> = (0..dets.detections.len())
                    .filter(|&i| dets.detections[i].category_id == c && dets.detections[i].image_id == im.id)
                    .collect();
                mine.sort_by(|&i, &j| {
                    dets.detections[j]
                        .score
                        .partial_cmp(&dets.detections[i].score)
                        .unwrap()
                        .then(i.cmp(&j))
                });
                mine.truncate(max_dets);
                let mut used = vec![false; gts.len()];
                for i in mine {
                    let d = &dets.detections[i];
                    let region = region_of([d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h], d.segmentation.as_ref());
                    let mut pick: Option<(usize, f64)> = None;
                    for (j, (g, crowd)) in gts.iter().enumerate() {
                        if *crowd || used[j] {
                            continue;
                        }
                        let o = overlap(&region, g, false);
                        if o >= t && pick.is_none_or(|(_, best)| o > best) {
                            pick = Some((j, o));
                        }
                    }
                    match pick {
                        Some((j, _)) => {
                            used[j] = true;
                            records.push((d.score, i, true));
                        }
                        None => {
                            let swallowed = gts.iter().any(|(g, crowd)| *crowd && overlap(&region, g, true) >= t);
                            if !swallowed {
                                records.push((d.score, i, false));
                            }
                        }
                    }
                }
            }
            per_threshold.push(interpolated_ap(&mut records, n_gt));
        }
        report.per_category.insert(c, mean(&per_threshold).unwrap());
    }
    let all: Vec<f64> = report.per_category.values().copied().collect();
    report.map = mean(&all);
    if let Some((base, novel)) = split {
        let pick = |set: &BTreeSet<u32>| {
            let v: Vec<f64> = report
                .per_category
                .iter()
                .filter(|(c, _)| set.contains(c))
                .map(|(_, ap)| *ap)
                .collect();
            mean(&v)
        };
        report.base = pick(base);
        report.novel = pick(novel);
    }
    report
}

/// Recall of the top-k proposals per image at `iou`, matched greedily in
/// score order; crowd ground truth excluded.
pub fn oracle_recall(gt: &AnnotationSet, props: &DetectionSet, k: usize, iou: f64) -> f64 {
    let regular: Vec<_> = gt.annotations.iter().filter(|a| a.iscrowd == 0).collect();
    if regular.is_empty() {
        return 0.0;
    }
    let mut hit = 0;
    for im in &gt.images {
        let gts: Vec<[f64; 4]> = regular
            .iter()
            .filter(|a| a.image_id == im.id)
            .map(|a| [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h])
            .collect();
        let mut order: Vec<usize> = (0..props.detections.len())
            .filter(|&i| props.detections[i].image_id == im.id)
            .collect();
        order.sort_by(|&i, &j| {
            props.detections[j]
                .score
                .partial_cmp(&props.detections[i].score)
                .unwrap()
                .then(i.cmp(&j))
        });
        let mut used = vec![false; gts.len()];
        for &i in order.iter().take(k) {
            let b = &props.detections[i].bbox;
            let region = Region::Rect([b.x, b.y, b.w, b.h]);
            let mut pick: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                let o = overlap(&region, &Region::Rect(*g), false);
                if !used[j] && o >= iou && pick.is_none_or(|(_, best)| o > best) {
                    pick = Some((j, o));
                }
            }
            if let Some((j, _)) = pick {
                used[j] = true;
                hit += 1;
            }
        }
    }
    hit as f64 / regular.len() as f64
}
