/// 101-point interpolated average precision.
///
/// `true_positives` lists non-ignored detections in descending score order.
/// Precision is made non-increasing from the right and sampled at recalls
/// `0, 0.01, ..., 1`; a recall level never reached contributes 0. Returns 0
/// when `n_gt == 0` (callers exclude such categories from means).
pub fn average_precision(true_positives: &[bool], n_gt: usize) -> f64 {
    average_precision_at(true_positives, n_gt, 101)
}

/// [`average_precision`] with a configurable number of recall samples.
pub fn average_precision_at(true_positives: &[bool], n_gt: usize, recall_points: usize) -> f64 {
    if n_gt == 0 || recall_points == 0 {
        return 0.0;
    }
    let n = true_positives.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in true_positives {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..n).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let step = if recall_points > 1 { 1.0 / (recall_points - 1) as f64 } else { 0.0 };
    let mut total = 0.0;
    for r in 0..recall_points {
        let thr = if r + 1 == recall_points && recall_points > 1 { 1.0 } else { r as f64 * step };
        let idx = recall.partition_point(|&x| x < thr);
        if idx < n {
            total += precision[idx];
        }
    }
    total / recall_points as f64
}
