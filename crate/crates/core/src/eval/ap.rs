//! Average precision over a ranked list of true/false positives.

/// A scored prediction after matching: `(score, is_true_positive)`.
pub type Ranked = (f64, bool);

/// All-points average precision: the area under the precision envelope
/// of the precision-recall curve.
///
/// Predictions sharing a score enter the curve together, so a ranking
/// with one score contributes a single operating point. `num_gt = 0`
/// yields 0.
pub fn average_precision(ranked: &[Ranked], num_gt: usize) -> f64 {
    if num_gt == 0 || ranked.is_empty() {
        return 0.0;
    }
    let mut curve = pr_curve(ranked, num_gt);
    let mut envelope = 0.0f64;
    for p in curve.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in curve {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Raw `(recall, precision)` operating points, one per distinct score in
/// descending order. Empty when `num_gt = 0`.
pub fn pr_curve(ranked: &[Ranked], num_gt: usize) -> Vec<(f64, f64)> {
    if num_gt == 0 {
        return Vec::new();
    }
    let mut sorted = ranked.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            seen += 1;
            tp += usize::from(sorted[i].1);
            i += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / seen as f64));
    }
    curve
}
