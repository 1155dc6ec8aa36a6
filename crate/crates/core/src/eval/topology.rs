//! Edge-level topology AP, a simplified variant of the benchmark scorer.
//!
//! Ground-truth instances are first matched to predictions (lanes by
//! Fréchet distance at 1 m, traffic by IoU 0.5). Every ordered GT pair
//! whose two instances are both matched becomes a slot ranked by the
//! predicted score between the matched predictions. Pairs with an
//! unmatched instance are left out of the ranking, but their GT edges
//! still count as positives, so they cap the reachable recall. Lane-lane
//! self pairs are excluded.

use super::ap::{average_precision, Ranked};
use crate::{BinaryMatrix, Matrix};

/// Lane matching threshold (m) used to align topology.
pub const TOP_LANE_THRESHOLD: f64 = 1.0;

/// Inverts a `pred → gt` map into `gt → pred`.
pub fn invert(map: &[Option<usize>], num_gt: usize) -> Vec<Option<usize>> {
    let mut inv = vec![None; num_gt];
    for (p, g) in map.iter().enumerate() {
        if let Some(g) = g {
            inv[*g] = Some(p);
        }
    }
    inv
}

/// Ranked slots and positive count for one topology matrix. `rows` and
/// `cols` map GT indices to matched prediction indices.
pub fn topology_slots(
    scores: &Matrix,
    gt: &BinaryMatrix,
    rows: &[Option<usize>],
    cols: &[Option<usize>],
    skip_diagonal: bool,
) -> (Vec<Ranked>, usize) {
    let mut ranked = Vec::new();
    let mut positives = 0;
    for (gi, pr) in rows.iter().enumerate() {
        for (gj, pc) in cols.iter().enumerate() {
            if skip_diagonal && gi == gj {
                continue;
            }
            let edge = gt.get(gi, gj);
            positives += usize::from(edge);
            if let (Some(r), Some(c)) = (pr, pc) {
                ranked.push((scores.get(*r, *c), edge));
            }
        }
    }
    (ranked, positives)
}

/// Edge AP ×100.
pub fn top_score(
    scores: &Matrix,
    gt: &BinaryMatrix,
    rows: &[Option<usize>],
    cols: &[Option<usize>],
    skip_diagonal: bool,
) -> f64 {
    let (r, n) = topology_slots(scores, gt, rows, cols, skip_diagonal);
    100.0 * average_precision(&r, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores_give_full_marks() {
        let gt = BinaryMatrix::from_edges(3, 3, &[[0, 1], [1, 2]]).unwrap();
        let ids: Vec<Option<usize>> = (0..3).map(Some).collect();
        assert_eq!(top_score(&gt.to_matrix(), &gt, &ids, &ids, true), 100.0);
        assert_eq!(top_score(&gt.to_matrix(), &gt, &[None; 3], &[None; 3], true), 0.0);
    }

    #[test]
    fn constant_scores_give_edge_density() {
        let gt = BinaryMatrix::from_edges(3, 3, &[[0, 1], [1, 2]]).unwrap();
        let ids: Vec<Option<usize>> = (0..3).map(Some).collect();
        let v = top_score(&Matrix::filled(3, 3, 0.5), &gt, &ids, &ids, true);
        assert!((v - 100.0 * 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn unmatched_instances_cap_recall() {
        let gt = BinaryMatrix::from_edges(3, 3, &[[0, 1], [1, 2]]).unwrap();
        let rows = [Some(0), Some(1), None];
        let v = top_score(&gt.to_matrix(), &gt, &rows, &rows, true);
        assert_eq!(v, 50.0);
    }
}
