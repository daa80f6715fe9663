use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::box_iou;
use crate::io::coco::{AnnotationSet, DetectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    pub k: usize,
    pub recall: f64,
}

/// Class-agnostic box recall of the top `k` proposals per image.
///
/// Proposals are ranked per image by score (ties by input order) and matched
/// greedily: each takes the still-unmatched ground-truth box with the highest
/// IoU at or above `iou_threshold`. Crowd ground truth is excluded. Returns
/// the fraction of ground-truth boxes matched, 0 when there are none.
pub fn average_recall(gt: &AnnotationSet, proposals: &DetectionSet, k: usize, iou_threshold: f64) -> f64 {
    let mut gt_boxes: BTreeMap<u64, Vec<_>> = BTreeMap::new();
    for a in gt.annotations.iter().filter(|a| !a.is_crowd()) {
        gt_boxes.entry(a.image_id).or_default().push(a.bbox);
    }
    let total: usize = gt_boxes.values().map(Vec::len).sum();
    if total == 0 || k == 0 {
        return 0.0;
    }
    let mut ranked: BTreeMap<u64, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, d) in proposals.detections.iter().enumerate() {
        ranked.entry(d.image_id).or_default().push((d.score, i));
    }
    let mut matched = 0usize;
    for (image_id, boxes) in &gt_boxes {
        let Some(props) = ranked.get_mut(image_id) else {
            continue;
        };
        props.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut taken = vec![false; boxes.len()];
        for &(_, i) in props.iter().take(k) {
            let p = &proposals.detections[i].bbox;
            let mut best: Option<(usize, f64)> = None;
            for (g, b) in boxes.iter().enumerate() {
                let iou = box_iou(p, b);
                if taken[g] || iou < iou_threshold {
                    continue;
                }
                if best.is_none_or(|(_, v)| iou > v) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                matched += 1;
            }
        }
    }
    matched as f64 / total as f64
}

/// [`average_recall`] at several proposal budgets.
pub fn recall_curve(gt: &AnnotationSet, proposals: &DetectionSet, ks: &[usize], iou_threshold: f64) -> Vec<RecallAt> {
    ks.iter()
        .map(|&k| RecallAt {
            k,
            recall: average_recall(gt, proposals, k, iou_threshold),
        })
        .collect()
}
