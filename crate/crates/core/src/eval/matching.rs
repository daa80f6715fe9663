/// What a detection turned into after matching at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetOutcome {
    /// Matched the ground truth at this index.
    TruePositive(usize),
    /// Matched only an ignored (crowd) region; neither TP nor FP.
    Ignored,
    FalsePositive,
}

/// COCO greedy matching.
///
/// `ious[d][g]` is the overlap of detection `d` with ground truth `g`;
/// detections must already be in descending score order. Each detection takes
/// the still-unmatched regular ground truth with the highest IoU at or above
/// `threshold` (ties to the lowest index). Failing that, overlapping an
/// ignored ground truth marks it [`DetOutcome::Ignored`]; ignored ground
/// truths may absorb any number of detections.
pub fn match_greedy(ious: &[Vec<f64>], gt_ignore: &[bool], threshold: f64) -> Vec<DetOutcome> {
    let mut taken = vec![false; gt_ignore.len()];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                if gt_ignore[g] || taken[g] || iou < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                return DetOutcome::TruePositive(g);
            }
            let hits_ignored = row
                .iter()
                .zip(gt_ignore)
                .any(|(&iou, &ig)| ig && iou >= threshold);
            if hits_ignored {
                DetOutcome::Ignored
            } else {
                DetOutcome::FalsePositive
            }
        })
        .collect()
}
