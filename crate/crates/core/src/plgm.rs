//! Point-lane geometry matching: snap lane endpoints that cluster around a
//! confidently detected point onto their common mean.
//!
//! Points above `tau_p` are visited in descending score order (ties by
//! index). Each visits every unclaimed endpoint, start and end taken
//! separately, of the lanes above `tau_l` that lies strictly closer than
//! `delta` in Euclidean distance. A non-empty set of matches is replaced by
//! the mean of the point and the matched endpoints, and those endpoints are
//! claimed so that later points cannot take them again.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_value, unknown_key, Section};
use crate::scene::{DetectionSet, EndFlag, Point3};
use crate::{Error, Lane, Matrix, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub tau_p: f64,
    pub tau_l: f64,
    /// Matching radius in metres.
    pub delta: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self { tau_p: 0.3, tau_l: 0.3, delta: 1.5 }
    }
}

impl Section for RefinementConfig {
    const PREFIX: &'static str = "refine";

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau_p" => self.tau_p = parse_value(key, value)?,
            "tau_l" => self.tau_l = parse_value(key, value)?,
            "delta" => self.delta = parse_value(key, value)?,
            _ => return Err(unknown_key(Self::PREFIX, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_p) || !(0.0..=1.0).contains(&self.tau_l) {
            return Err(Error::Config(format!("refine thresholds must lie in [0, 1]: {self:?}")));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("refine.delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub point: usize,
    /// Matched `(lane, end)` pairs in lane order, start before end.
    pub members: Vec<(usize, EndFlag)>,
    pub refined: Point3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointMove {
    pub lane: usize,
    pub end: EndFlag,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub clusters: Vec<Cluster>,
    pub moved: Vec<EndpointMove>,
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn mean_with(p: &Point3, members: &[Point3]) -> Point3 {
    let mut s = *p;
    for e in members {
        for c in 0..3 {
            s[c] += e[c];
        }
    }
    let n = (members.len() + 1) as f64;
    [s[0] / n, s[1] / n, s[2] / n]
}

fn point_order(dets: &DetectionSet, tau_p: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.points.len()).filter(|&i| dets.point_scores[i] > tau_p).collect();
    idx.sort_by(|&a, &b| dets.point_scores[b].total_cmp(&dets.point_scores[a]).then(a.cmp(&b)));
    idx
}

fn flag_index(f: EndFlag) -> usize {
    match f {
        EndFlag::Start => 0,
        EndFlag::End => 1,
    }
}

/// Refines lane endpoints; everything except the matched endpoints is
/// returned unchanged.
pub fn refine(dets: &DetectionSet, cfg: &RefinementConfig) -> (DetectionSet, RefinementTrace) {
    let mut out = dets.clone();
    let mut trace = RefinementTrace::default();
    if !(cfg.delta > 0.0) {
        return (out, trace);
    }
    let cell = cfg.delta;
    let key = |p: &Point3| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<(usize, EndFlag)>> = HashMap::new();
    for (j, lane) in dets.lanes.iter().enumerate() {
        if dets.lane_scores[j] > cfg.tau_l {
            for f in [EndFlag::Start, EndFlag::End] {
                grid.entry(key(&lane.endpoint(f))).or_default().push((j, f));
            }
        }
    }
    let mut claimed = vec![[false; 2]; dets.lanes.len()];
    for i in point_order(dets, cfg.tau_p) {
        let p = dets.points[i];
        let (cx, cy) = key(&p);
        let mut members: Vec<(usize, EndFlag)> = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else { continue };
                for &(j, f) in bucket {
                    if !claimed[j][flag_index(f)] && dist(&p, &dets.lanes[j].endpoint(f)) < cfg.delta {
                        members.push((j, f));
                    }
                }
            }
        }
        if members.is_empty() {
            continue;
        }
        members.sort_unstable();
        let ends: Vec<Point3> = members.iter().map(|&(j, f)| dets.lanes[j].endpoint(f)).collect();
        let e = mean_with(&p, &ends);
        for (&(j, f), orig) in members.iter().zip(&ends) {
            claimed[j][flag_index(f)] = true;
            out.lanes[j].set_endpoint(f, e);
            trace.moved.push(EndpointMove { lane: j, end: f, distance: dist(orig, &e) });
        }
        trace.clusters.push(Cluster { point: i, members, refined: e });
    }
    (out, trace)
}

/// Direct quadratic transcription of the matching procedure, kept free of
/// any code shared with [`refine`].
pub fn refine_oracle(dets: &DetectionSet, cfg: &RefinementConfig) -> Vec<Vec<Point3>> {
    let mut lanes: Vec<Vec<Point3>> = dets.lanes.iter().map(|l| l.points().to_vec()).collect();
    let selected_lanes: Vec<usize> = (0..lanes.len()).filter(|&j| dets.lane_scores[j] > cfg.tau_l).collect();
    let mut points: Vec<usize> = (0..dets.points.len()).filter(|&i| dets.point_scores[i] > cfg.tau_p).collect();
    // Stable sort keeps index order among equal scores.
    points.sort_by(|&a, &b| dets.point_scores[b].partial_cmp(&dets.point_scores[a]).unwrap());
    let mut taken: Vec<(usize, usize)> = Vec::new();
    for &i in &points {
        let p = dets.points[i];
        let mut matched: Vec<(usize, usize)> = Vec::new();
        for &j in &selected_lanes {
            for which in [0usize, 1] {
                if taken.contains(&(j, which)) {
                    continue;
                }
                let q = if which == 0 { lanes[j][0] } else { lanes[j][lanes[j].len() - 1] };
                let d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
                if d2.sqrt() < cfg.delta {
                    matched.push((j, which));
                }
            }
        }
        if matched.is_empty() {
            continue;
        }
        let mut sum = p;
        for &(j, which) in &matched {
            let q = if which == 0 { lanes[j][0] } else { lanes[j][lanes[j].len() - 1] };
            sum[0] += q[0];
            sum[1] += q[1];
            sum[2] += q[2];
        }
        let n = matched.len() as f64 + 1.0;
        let e = [sum[0] / n, sum[1] / n, sum[2] / n];
        for &(j, which) in &matched {
            let last = lanes[j].len() - 1;
            lanes[j][if which == 0 { 0 } else { last }] = e;
            taken.push((j, which));
        }
    }
    lanes
}

/// Random detections with endpoints scattered around the points, for
/// oracle checks and timing. Scores lie on a 0.05 grid so ties occur.
pub fn random_detections(seed: u64, n_points: usize, n_lanes: usize, extent: f64) -> DetectionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(0..=20u8)) * 0.05;
    let points: Vec<Point3> = (0..n_points)
        .map(|_| [rng.random_range(0.0..extent), rng.random_range(0.0..extent), rng.random_range(-0.2..0.2)])
        .collect();
    let point_scores = (0..n_points).map(|_| score(&mut rng)).collect();
    let near = |rng: &mut ChaCha8Rng| -> Point3 {
        let base = if points.is_empty() || rng.random_bool(0.2) {
            [rng.random_range(0.0..extent), rng.random_range(0.0..extent), 0.0]
        } else {
            points[rng.random_range(0..points.len())]
        };
        [base[0] + rng.random_range(-2.0..2.0), base[1] + rng.random_range(-2.0..2.0), base[2] + rng.random_range(-0.3..0.3)]
    };
    let lanes: Vec<Lane> = (0..n_lanes)
        .map(|_| {
            let a = near(&mut rng);
            let b = near(&mut rng);
            let pts = (0..4)
                .map(|i| {
                    let t = f64::from(i) / 3.0;
                    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]) + 0.3 * (t * (1.0 - t)), a[2] + t * (b[2] - a[2])]
                })
                .collect();
            Lane::new(pts).expect("four points")
        })
        .collect();
    let lane_scores = (0..n_lanes).map(|_| score(&mut rng)).collect();
    DetectionSet {
        points,
        point_scores,
        lanes,
        lane_scores,
        traffic: Vec::new(),
        g_pl: Matrix::zeros(n_points, n_lanes),
        g_ll: Matrix::zeros(n_lanes, n_lanes),
        g_lt: Matrix::zeros(n_lanes, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dets(points: Vec<(Point3, f64)>, lanes: Vec<(Vec<Point3>, f64)>) -> DetectionSet {
        let (np, nl) = (points.len(), lanes.len());
        DetectionSet {
            point_scores: points.iter().map(|p| p.1).collect(),
            points: points.into_iter().map(|p| p.0).collect(),
            lane_scores: lanes.iter().map(|l| l.1).collect(),
            lanes: lanes.into_iter().map(|l| Lane::new(l.0).unwrap()).collect(),
            traffic: Vec::new(),
            g_pl: Matrix::zeros(np, nl),
            g_ll: Matrix::zeros(nl, nl),
            g_lt: Matrix::zeros(nl, 0),
        }
    }

    #[test]
    fn single_match_moves_to_midpoint() {
        let d = dets(vec![([0.0; 3], 0.9)], vec![(vec![[-5.0, 0.0, 0.0], [0.8, 0.0, 0.0]], 0.9)]);
        let (r, t) = refine(&d, &RefinementConfig::default());
        assert_eq!(r.lanes[0].end(), [0.4, 0.0, 0.0]);
        assert_eq!(r.lanes[0].start(), [-5.0, 0.0, 0.0]);
        assert_eq!(t.clusters.len(), 1);
        assert!((t.moved[0].distance - 0.4).abs() < 1e-15);
    }

    #[test]
    fn low_score_point_is_ignored() {
        let d = dets(vec![([0.0; 3], 0.2)], vec![(vec![[-5.0, 0.0, 0.0], [0.8, 0.0, 0.0]], 0.9)]);
        let (r, t) = refine(&d, &RefinementConfig::default());
        assert_eq!(r, d);
        assert!(t.clusters.is_empty());
    }

    #[test]
    fn symmetric_pair_snaps_to_point() {
        let d = dets(
            vec![([0.0; 3], 0.9)],
            vec![(vec![[-5.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], 0.9), (vec![[1.0, 0.0, 0.0], [5.0, 0.0, 0.0]], 0.9)],
        );
        let (r, _) = refine(&d, &RefinementConfig::default());
        assert_eq!(r.lanes[0].end(), [0.0; 3]);
        assert_eq!(r.lanes[1].start(), [0.0; 3]);
        let oracle = refine_oracle(&d, &RefinementConfig::default());
        assert_eq!(oracle[0], r.lanes[0].points());
        assert_eq!(oracle[1], r.lanes[1].points());
    }

    #[test]
    fn higher_score_point_claims_first() {
        let d = dets(
            vec![([1.0, 0.0, 0.0], 0.5), ([-0.5, 0.0, 0.0], 0.8)],
            vec![(vec![[-5.0, 0.0, 0.0], [0.0, 0.0, 0.0]], 0.9)],
        );
        let (r, t) = refine(&d, &RefinementConfig::default());
        assert_eq!(t.clusters.len(), 1);
        assert_eq!(t.clusters[0].point, 1);
        assert_eq!(r.lanes[0].end(), [-0.25, 0.0, 0.0]);
    }

    #[test]
    fn zero_radius_and_empty_input() {
        let d = dets(vec![([0.0; 3], 0.9)], vec![(vec![[0.0; 3], [1.0, 0.0, 0.0]], 0.9)]);
        let cfg = RefinementConfig { delta: 0.0, ..Default::default() };
        assert_eq!(refine(&d, &cfg).0, d);
        assert_eq!(refine_oracle(&d, &cfg)[0], d.lanes[0].points());
        let e = DetectionSet::empty();
        assert_eq!(refine(&e, &RefinementConfig::default()).0, e);
        assert!(refine_oracle(&e, &RefinementConfig::default()).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(RefinementConfig::default().validate().is_ok());
        assert!(RefinementConfig { delta: 0.0, ..Default::default() }.validate().is_err());
        assert!(RefinementConfig { tau_p: 1.5, ..Default::default() }.validate().is_err());
    }
}
