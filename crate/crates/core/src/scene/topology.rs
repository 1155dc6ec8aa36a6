use std::collections::HashSet;

use super::{Lane, Point3};
use crate::{BinaryMatrix, Error, Result};

/// Integer key of a point quantized to 1e-6 m; equal keys mean "same point".
pub type EndpointKey = [i64; 3];

pub fn quantize(p: &Point3) -> EndpointKey {
    p.map(|v| (v * 1e6).round() as i64)
}

/// Unique lane start/end points in first-occurrence order (start before end).
pub fn extract_endpoints<L: AsRef<[Point3]>>(lanes: &[L]) -> Vec<Point3> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for lane in lanes {
        let pts = lane.as_ref();
        let (Some(first), Some(last)) = (pts.first(), pts.last()) else {
            continue;
        };
        for p in [first, last] {
            if seen.insert(quantize(p)) {
                out.push(*p);
            }
        }
    }
    out
}

/// Builds `(g_pl, g_ll, g_lt)` for ground-truth lanes.
///
/// `traffic_assignments[j]` lists the traffic elements associated with lane
/// `j`; `n_traffic` is the number of traffic elements.
pub fn build_gt_topology(
    lanes: &[Lane],
    points: &[Point3],
    traffic_assignments: &[Vec<usize>],
    n_traffic: usize,
) -> Result<(BinaryMatrix, BinaryMatrix, BinaryMatrix)> {
    let nl = lanes.len();
    let keys: Vec<EndpointKey> = points.iter().map(quantize).collect();
    let starts: Vec<EndpointKey> = lanes.iter().map(|l| quantize(&l.start())).collect();
    let ends: Vec<EndpointKey> = lanes.iter().map(|l| quantize(&l.end())).collect();

    let mut g_pl = BinaryMatrix::new(points.len(), nl);
    for (i, key) in keys.iter().enumerate() {
        let mut hit = false;
        for j in 0..nl {
            if *key == starts[j] || *key == ends[j] {
                g_pl.set(i, j, true);
                hit = true;
            }
        }
        if !hit {
            return Err(Error::Consistency(format!(
                "point {i} {:?} is not an endpoint of any lane",
                points[i]
            )));
        }
    }
    for j in 0..nl {
        let n = g_pl.col_count(j);
        if n != 2 {
            return Err(Error::Consistency(format!(
                "lane {j} has {n} incident points, expected 2"
            )));
        }
    }

    let mut g_ll = BinaryMatrix::new(nl, nl);
    for i in 0..nl {
        for j in 0..nl {
            if ends[i] == starts[j] {
                g_ll.set(i, j, true);
            }
        }
    }

    if traffic_assignments.len() != nl {
        return Err(Error::Consistency(format!(
            "{} traffic assignments for {nl} lanes",
            traffic_assignments.len()
        )));
    }
    let mut g_lt = BinaryMatrix::new(nl, n_traffic);
    for (j, assigned) in traffic_assignments.iter().enumerate() {
        for &t in assigned {
            if t >= n_traffic {
                return Err(Error::Consistency(format!(
                    "lane {j} assigned to traffic element {t} of {n_traffic}"
                )));
            }
            g_lt.set(j, t, true);
        }
    }
    Ok((g_pl, g_ll, g_lt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane(a: Point3, b: Point3) -> Lane {
        Lane::new(vec![a, [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, 0.0], b]).unwrap()
    }

    #[test]
    fn shared_endpoint_yields_three_points() {
        let lanes = [lane([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), lane([1.0, 0.0, 0.0], [2.0, 1.0, 0.0])];
        let pts = extract_endpoints(&lanes);
        assert_eq!(pts, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 1.0, 0.0]]);
    }

    #[test]
    fn single_and_duplicate_lanes() {
        let a = lane([0.0, 0.0, 0.0], [4.0, 0.0, 0.0]);
        assert_eq!(extract_endpoints(&[a.clone()]).len(), 2);
        assert_eq!(extract_endpoints(&[a.clone(), a]).len(), 2);
        assert!(extract_endpoints::<Lane>(&[]).is_empty());
    }

    #[test]
    fn dedup_is_idempotent() {
        let lanes = [lane([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), lane([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])];
        let pts = extract_endpoints(&lanes);
        let as_lanes: Vec<Vec<Point3>> = pts.iter().map(|p| vec![*p]).collect();
        assert_eq!(extract_endpoints(&as_lanes), pts);
    }

    #[test]
    fn chain_is_directional() {
        let lanes = vec![lane([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), lane([1.0, 0.0, 0.0], [2.0, 0.0, 0.0])];
        let pts = extract_endpoints(&lanes);
        let (_, g_ll, _) = build_gt_topology(&lanes, &pts, &[vec![], vec![]], 0).unwrap();
        assert!(g_ll.get(0, 1));
        assert!(!g_ll.get(1, 0));
        assert_eq!(g_ll.count(), 1);
    }

    #[test]
    fn disjoint_lanes_have_no_connectivity() {
        let lanes = vec![lane([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), lane([5.0, 5.0, 0.0], [6.0, 5.0, 0.0])];
        let pts = extract_endpoints(&lanes);
        let (g_pl, g_ll, _) = build_gt_topology(&lanes, &pts, &[vec![], vec![]], 0).unwrap();
        assert_eq!(g_ll.count(), 0);
        assert_eq!(g_pl.count(), 4);
    }

    #[test]
    fn junction_point_touches_three_lanes() {
        // One incoming lane ends where two outgoing lanes start.
        let j = [0.0, 0.0, 0.0];
        let lanes = vec![lane([-5.0, 0.0, 0.0], j), lane(j, [5.0, 1.0, 0.0]), lane(j, [5.0, -1.0, 0.0])];
        let pts = extract_endpoints(&lanes);
        let (g_pl, g_ll, _) = build_gt_topology(&lanes, &pts, &[vec![], vec![], vec![]], 0).unwrap();
        let row = pts.iter().position(|p| *p == j).unwrap();
        assert_eq!(g_pl.row_count(row), 3);
        assert!(g_ll.get(0, 1) && g_ll.get(0, 2));
        for c in 0..3 {
            assert_eq!(g_pl.col_count(c), 2);
        }
    }

    #[test]
    fn foreign_point_is_a_consistency_error() {
        let lanes = vec![lane([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])];
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [9.0, 9.0, 0.0]];
        let err = build_gt_topology(&lanes, &pts, &[vec![]], 0).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }

    #[test]
    fn traffic_assignment_out_of_range() {
        let lanes = vec![lane([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])];
        let pts = extract_endpoints(&lanes);
        assert!(build_gt_topology(&lanes, &pts, &[vec![2]], 2).is_err());
        let (_, _, g_lt) = build_gt_topology(&lanes, &pts, &[vec![1]], 2).unwrap();
        assert!(g_lt.get(0, 1));
    }
}
