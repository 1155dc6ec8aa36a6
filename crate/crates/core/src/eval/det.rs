//! Greedy score-ordered matching and the detection metrics.

use std::collections::BTreeMap;

use super::ap::{average_precision, Ranked};
use crate::geometry::discrete_frechet;
use crate::scene::{Lane, Point3, TrafficDetection, TrafficElement};
use crate::training::giou;
use crate::{Matrix, Result};

/// Distance thresholds (m) for point and lane detection.
pub const DET_THRESHOLDS: [f64; 3] = [1.0, 2.0, 3.0];
/// Traffic detection IoU threshold.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Prediction indices in descending score order, ties by index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Each prediction, in score order, takes the nearest unmatched ground
/// truth with `dist ≤ threshold` (lowest index on ties). Returns the ranked
/// list and the `pred → gt` map.
pub fn greedy_match(dist: &Matrix, scores: &[f64], threshold: f64) -> (Vec<Ranked>, Vec<Option<usize>>) {
    let ng = dist.cols();
    let mut taken = vec![false; ng];
    let mut map = vec![None; dist.rows()];
    let mut ranked = Vec::with_capacity(dist.rows());
    for i in score_order(scores) {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..ng {
            let d = dist.get(i, j);
            if !taken[j] && d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            map[i] = Some(j);
        }
        ranked.push((scores[i], best.is_some()));
    }
    debug_assert!({
        let mut seen = vec![false; ng];
        map.iter().flatten().all(|&j| !std::mem::replace(&mut seen[j], true))
    });
    (ranked, map)
}

pub fn point_distances(pred: &[Point3], gt: &[Point3]) -> Matrix {
    let mut d = Matrix::zeros(pred.len(), gt.len());
    for (i, p) in pred.iter().enumerate() {
        for (j, q) in gt.iter().enumerate() {
            d.set(i, j, ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
        }
    }
    d
}

pub fn lane_distances(pred: &[Lane], gt: &[Lane]) -> Result<Matrix> {
    let mut d = Matrix::zeros(pred.len(), gt.len());
    for (i, p) in pred.iter().enumerate() {
        for (j, q) in gt.iter().enumerate() {
            d.set(i, j, discrete_frechet(p.points(), q.points())?);
        }
    }
    Ok(d)
}

/// Ranked lists at each distance threshold.
pub fn threshold_rankings(dist: &Matrix, scores: &[f64]) -> Vec<Vec<Ranked>> {
    DET_THRESHOLDS.iter().map(|&t| greedy_match(dist, scores, t).0).collect()
}

/// Mean AP over [`DET_THRESHOLDS`], ×100.
pub fn mean_threshold_ap(rankings: &[Vec<Ranked>], num_gt: usize) -> f64 {
    100.0 * rankings.iter().map(|r| average_precision(r, num_gt)).sum::<f64>() / rankings.len() as f64
}

pub fn det_p(pred: &[Point3], scores: &[f64], gt: &[Point3]) -> f64 {
    mean_threshold_ap(&threshold_rankings(&point_distances(pred, gt), scores), gt.len())
}

pub fn det_l(pred: &[Lane], scores: &[f64], gt: &[Lane]) -> Result<f64> {
    Ok(mean_threshold_ap(&threshold_rankings(&lane_distances(pred, gt)?, scores), gt.len()))
}

/// Per-category greedy IoU matching. Returns, per ground-truth category,
/// the ranked list and GT count, plus the `pred → gt` map.
#[allow(clippy::type_complexity)]
pub fn traffic_match(
    pred: &[TrafficDetection],
    gt: &[TrafficElement],
) -> Result<(BTreeMap<u32, (Vec<Ranked>, usize)>, Vec<Option<usize>>)> {
    let mut per_cat: BTreeMap<u32, (Vec<Ranked>, usize)> = BTreeMap::new();
    for t in gt {
        per_cat.entry(t.cat).or_default().1 += 1;
    }
    let scores: Vec<f64> = pred.iter().map(|p| p.score).collect();
    let mut taken = vec![false; gt.len()];
    let mut map = vec![None; pred.len()];
    for i in score_order(&scores) {
        let Some(entry) = per_cat.get_mut(&pred[i].cat) else { continue };
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in gt.iter().enumerate() {
            if taken[j] || t.cat != pred[i].cat {
                continue;
            }
            let iou = iou(&pred[i].bbox, &t.bbox)?;
            if iou >= IOU_THRESHOLD && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            map[i] = Some(j);
        }
        entry.0.push((pred[i].score, best.is_some()));
    }
    Ok((per_cat, map))
}

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> Result<f64> {
    giou(a, b)?;
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    Ok(inter / (area(a) + area(b) - inter))
}

/// Category-mean AP at IoU 0.5, ×100, over categories present in `gt`.
pub fn det_t(pred: &[TrafficDetection], gt: &[TrafficElement]) -> Result<f64> {
    let (per_cat, _) = traffic_match(pred, gt)?;
    Ok(category_mean(&per_cat))
}

pub fn category_mean(per_cat: &BTreeMap<u32, (Vec<Ranked>, usize)>) -> f64 {
    if per_cat.is_empty() {
        return 0.0;
    }
    100.0 * per_cat.values().map(|(r, n)| average_precision(r, *n)).sum::<f64>() / per_cat.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_examples() {
        let gt = vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        assert_eq!(det_p(&gt, &[1.0, 1.0], &gt), 100.0);
        let v = det_p(&[[1.5, 0.0, 0.0]], &[0.9], &gt[..1]);
        assert!((v - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(det_p(&[], &[], &gt), 0.0);
        assert_eq!(det_p(&gt, &[1.0, 1.0], &[]), 0.0);
    }

    #[test]
    fn greedy_prefers_nearest_then_lowest_index() {
        let d = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
        let (r, m) = greedy_match(&d, &[0.9, 0.8], 1.0);
        assert_eq!(m, vec![Some(0), Some(1)]);
        assert_eq!(r, vec![(0.9, true), (0.8, true)]);
    }

    #[test]
    fn iou_values() {
        let a = [0.0, 0.0, 2.0, 2.0];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert!((iou(&a, &[1.0, 0.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }
}
