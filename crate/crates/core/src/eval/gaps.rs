//! Endpoint deviation at junctions.

use serde::{Deserialize, Serialize};

use crate::scene::{EndFlag, Lane};

/// Upper bin edges (m) of the gap histogram; the last bin is open.
pub const GAP_BIN_EDGES: [f64; 8] = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mean: f64,
    pub max: f64,
    /// Number of endpoint pairs measured.
    pub pairs: usize,
    /// Counts per [`GAP_BIN_EDGES`] bin plus one overflow bin.
    pub histogram: Vec<usize>,
}

impl GapReport {
    pub fn from_gaps(gaps: &[f64]) -> Self {
        let mut histogram = vec![0; GAP_BIN_EDGES.len() + 1];
        for g in gaps {
            let b = GAP_BIN_EDGES.iter().position(|e| g <= e).unwrap_or(GAP_BIN_EDGES.len());
            histogram[b] += 1;
        }
        let mean = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
        Self { mean, max: gaps.iter().copied().fold(0.0, f64::max), pairs: gaps.len(), histogram }
    }
}

/// Pairwise Euclidean gaps between the endpoints of each cluster.
pub fn cluster_gaps(lanes: &[Lane], clusters: &[Vec<(usize, EndFlag)>]) -> Vec<f64> {
    let mut gaps = Vec::new();
    for c in clusters {
        for a in 0..c.len() {
            for b in a + 1..c.len() {
                let p = lanes[c[a].0].endpoint(c[a].1);
                let q = lanes[c[b].0].endpoint(c[b].1);
                gaps.push(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
            }
        }
    }
    gaps
}

pub fn endpoint_gap_report(lanes: &[Lane], clusters: &[Vec<(usize, EndFlag)>]) -> GapReport {
    GapReport::from_gaps(&cluster_gaps(lanes, clusters))
}

/// Ground-truth clusters re-expressed on predicted lanes through a
/// `gt → pred` lane map; members whose lane is unmatched are dropped.
pub fn map_clusters(clusters: &[Vec<(usize, EndFlag)>], gt_to_pred: &[Option<usize>]) -> Vec<Vec<(usize, EndFlag)>> {
    clusters
        .iter()
        .map(|c| c.iter().filter_map(|&(l, f)| gt_to_pred[l].map(|p| (p, f))).collect::<Vec<_>>())
        .filter(|c| c.len() > 1)
        .collect()
}
