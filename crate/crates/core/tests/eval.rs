use lanetopo::eval::det::{lane_distances, point_distances};
use lanetopo::eval::topology::invert;
use lanetopo::eval::{
    average_precision, det_l, det_p, det_t, evaluate, evaluate_scene, greedy_match, ols, pooled_report, report_csv,
    top_score, topology_slots, MetricReport, Ranked, REPORT_CSV_HEADER,
};
use lanetopo::geometry::discrete_frechet;
use lanetopo::plgm::{refine, RefinementConfig};
use lanetopo::scene::{generate_scene, perturb_scene, TrafficDetection, TrafficElement};
use lanetopo::{BinaryMatrix, Error, Lane, Matrix, NoiseSpec, Point3, SceneConfig};
use proptest::prelude::*;

/// Integrates the precision envelope over recall exactly. The
/// envelope is piecewise constant between consecutive recall levels, so
/// evaluating it at each interval midpoint is exact.
fn ap_oracle(ranked: &[Ranked], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut cutoffs: Vec<f64> = ranked.iter().map(|r| r.0).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    let pr: Vec<(f64, f64)> = cutoffs
        .iter()
        .map(|&s| {
            let kept: Vec<&Ranked> = ranked.iter().filter(|r| r.0 >= s).collect();
            let tp = kept.iter().filter(|r| r.1).count() as f64;
            (tp / num_gt as f64, tp / kept.len() as f64)
        })
        .collect();
    let mut breaks: Vec<f64> = std::iter::once(0.0).chain(pr.iter().map(|p| p.0)).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let env = pr.iter().filter(|p| p.0 >= mid).map(|p| p.1).fold(0.0, f64::max);
            (w[1] - w[0]) * env
        })
        .sum()
}

/// Minimum over every monotone coupling of the maximum pointwise distance.
fn frechet_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    fn d(p: &Point3, q: &Point3) -> f64 {
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    }
    fn walk(a: &[Point3], b: &[Point3], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max(d(&a[i], &b[j]));
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(worst);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, worst, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, worst, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn straight(y: f64, dx: f64) -> Lane {
    Lane::new((0..5).map(|i| [dx + 3.0 * i as f64, y, 0.0]).collect()).unwrap()
}

fn tl(bbox: [f64; 4], cat: u32) -> TrafficElement {
    TrafficElement { bbox, cat }
}

fn td(bbox: [f64; 4], cat: u32, score: f64) -> TrafficDetection {
    TrafficDetection { bbox, cat, score }
}

proptest! {
    #[test]
    fn ap_matches_brute_force(
        items in prop::collection::vec((0u8..5, any::<bool>()), 0..=8),
        extra_gt in 0usize..4,
    ) {
        let ranked: Vec<Ranked> = items.iter().map(|&(s, tp)| (f64::from(s) / 4.0, tp)).collect();
        let num_gt = ranked.iter().filter(|r| r.1).count() + extra_gt;
        let ap = average_precision(&ranked, num_gt);
        prop_assert!((ap - ap_oracle(&ranked, num_gt)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn frechet_matches_exhaustive_couplings(
        a in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..=5),
        b in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..=5),
    ) {
        let dp = discrete_frechet(&a, &b).unwrap();
        prop_assert_eq!(dp, frechet_oracle(&a, &b));
    }

    #[test]
    fn greedy_matching_is_one_to_one(
        dists in prop::collection::vec(0.0f64..4.0, 30),
        scores in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let m = Matrix::from_vec(6, 5, dists).unwrap();
        let (ranked, map) = greedy_match(&m, &scores, 2.0);
        prop_assert_eq!(ranked.len(), 6);
        let mut used: Vec<usize> = map.iter().flatten().copied().collect();
        let n = used.len();
        used.sort_unstable();
        used.dedup();
        prop_assert_eq!(used.len(), n);
        for (i, g) in map.iter().enumerate() {
            if let Some(g) = g {
                prop_assert!(m.get(i, *g) <= 2.0);
            }
        }
    }

    #[test]
    fn detection_metrics_ignore_prediction_order(seed in 0u64..500, rot in 1usize..7) {
        let scene = generate_scene(seed, &SceneConfig::default()).unwrap();
        let noise = NoiseSpec { endpoint_sigma: 1.0, spurious_rate: 0.3, drop_rate: 0.1, ..NoiseSpec::default() };
        let d = perturb_scene(&scene, &noise, seed ^ 0xABCD).unwrap();
        let rotate = |n: usize| -> Vec<usize> { (0..n).map(|i| (i + rot) % n.max(1)).collect() };
        let pp = rotate(d.points.len());
        let lp = rotate(d.lanes.len());
        let tp = rotate(d.traffic.len());
        let points: Vec<Point3> = pp.iter().map(|&i| d.points[i]).collect();
        let pscores: Vec<f64> = pp.iter().map(|&i| d.point_scores[i]).collect();
        let lanes: Vec<Lane> = lp.iter().map(|&i| d.lanes[i].clone()).collect();
        let lscores: Vec<f64> = lp.iter().map(|&i| d.lane_scores[i]).collect();
        let traffic: Vec<TrafficDetection> = tp.iter().map(|&i| d.traffic[i].clone()).collect();
        prop_assert_eq!(
            det_p(&d.points, &d.point_scores, &scene.points),
            det_p(&points, &pscores, &scene.points)
        );
        prop_assert_eq!(
            det_l(&d.lanes, &d.lane_scores, &scene.lanes).unwrap(),
            det_l(&lanes, &lscores, &scene.lanes).unwrap()
        );
        prop_assert_eq!(det_t(&d.traffic, &scene.traffic).unwrap(), det_t(&traffic, &scene.traffic).unwrap());
    }

    #[test]
    fn reports_are_consistent(seed in 0u64..200) {
        let scene = generate_scene(seed, &SceneConfig::default()).unwrap();
        let d = perturb_scene(&scene, &NoiseSpec { spurious_rate: 0.2, ..NoiseSpec::default() }, seed).unwrap();
        let e = evaluate_scene(&d, &scene).unwrap();
        let r = pooled_report(&[&e]).unwrap();
        r.validate().unwrap();
        let again = ols(r.det_l, r.det_t, r.top_ll, r.top_lt).unwrap();
        prop_assert!((again - r.ols).abs() < 1e-9);
    }
}

#[test]
fn ap_oracle_agrees_on_hand_cases() {
    for (ranked, n, want) in [
        (vec![(0.9, true), (0.8, false)], 1, 1.0),
        (vec![(0.9, false), (0.8, true)], 1, 0.5),
        (vec![(0.5, true), (0.5, false)], 2, 0.25),
        (vec![], 3, 0.0),
    ] {
        assert_eq!(average_precision(&ranked, n), want);
        assert_eq!(ap_oracle(&ranked, n), want);
    }
}

#[test]
fn det_p_examples() {
    let gt: Vec<Point3> = vec![[0.0; 3], [10.0, 0.0, 0.0], [0.0, 10.0, 1.0]];
    assert_eq!(det_p(&gt, &[1.0; 3], &gt), 100.0);
    assert_eq!(det_p(&[], &[], &gt), 0.0);
    assert_eq!(det_p(&gt, &[1.0; 3], &[]), 0.0);
    let v = det_p(&[[1.5, 0.0, 0.0]], &[0.9], &[[0.0; 3]]);
    assert!((v - 66.67).abs() < 0.01, "{v}");
}

#[test]
fn det_l_examples() {
    let gt: Vec<Lane> = (0..4).map(|i| straight(10.0 * i as f64, 0.0)).collect();
    assert_eq!(det_l(&gt, &[1.0; 4], &gt).unwrap(), 100.0);
    let shifted: Vec<Lane> = (0..4).map(|i| straight(10.0 * i as f64, 1.5)).collect();
    let v = det_l(&shifted, &[0.9, 0.8, 0.7, 0.6], &gt).unwrap();
    assert!((v - 66.67).abs() < 0.01, "{v}");
    let half = det_l(&gt[..2], &[1.0, 1.0], &gt).unwrap();
    assert!((half - 50.0).abs() < 1e-12, "{half}");
    assert_eq!(det_l(&[], &[], &gt).unwrap(), 0.0);
}

#[test]
fn det_t_examples() {
    let gt = vec![tl([0.0, 0.0, 10.0, 10.0], 0), tl([50.0, 50.0, 60.0, 60.0], 1)];
    let exact: Vec<TrafficDetection> = gt.iter().map(|t| td(t.bbox, t.cat, 1.0)).collect();
    assert_eq!(det_t(&exact, &gt).unwrap(), 100.0);
    // A 10x10 box shifted by 5.4 along x overlaps with IoU 4.6/15.4 ≈ 0.3.
    let shifted: Vec<TrafficDetection> = gt
        .iter()
        .map(|t| td([t.bbox[0] + 5.4, t.bbox[1], t.bbox[2] + 5.4, t.bbox[3]], t.cat, 1.0))
        .collect();
    let iou = lanetopo::eval::iou(&shifted[0].bbox, &gt[0].bbox).unwrap();
    assert!((iou - 0.3).abs() < 0.01);
    assert_eq!(det_t(&shifted, &gt).unwrap(), 0.0);
    assert_eq!(det_t(&exact[..1], &gt).unwrap(), 50.0);
    assert_eq!(det_t(&exact, &[]).unwrap(), 0.0);
}

#[test]
fn topology_constant_scores_match_oracle() {
    let gt = BinaryMatrix::from_edges(4, 4, &[[0, 1], [1, 2], [2, 3], [3, 0], [0, 2]]).unwrap();
    let ids: Vec<Option<usize>> = (0..4).map(Some).collect();
    let half = Matrix::filled(4, 4, 0.5);
    let (ranked, positives) = topology_slots(&half, &gt, &ids, &ids, true);
    assert_eq!(ranked.len(), 12);
    assert_eq!(positives, 5);
    let v = top_score(&half, &gt, &ids, &ids, true);
    assert!((v - 100.0 * ap_oracle(&ranked, positives)).abs() < 1e-12);
    assert!((v - 100.0 * 5.0 / 12.0).abs() < 1e-9);
    assert_eq!(top_score(&gt.to_matrix(), &gt, &ids, &ids, true), 100.0);
    assert_eq!(top_score(&gt.to_matrix(), &gt, &[None; 4], &[None; 4], true), 0.0);
}

#[test]
fn clean_predictions_score_full_marks() {
    let scene = generate_scene(3, &SceneConfig::default()).unwrap();
    let d = perturb_scene(&scene, &NoiseSpec::zero(), 3).unwrap();
    let r = pooled_report(&[&evaluate_scene(&d, &scene).unwrap()]).unwrap();
    assert_eq!(r.det_p, 100.0);
    assert_eq!(r.det_l, 100.0);
    assert_eq!(r.det_t, 100.0);
    assert_eq!(r.top_ll, 100.0);
    assert_eq!(r.top_lt, 100.0);
    assert!((r.ols - 100.0).abs() < 1e-12);
    assert_eq!(r.endpoint_gap_mean, 0.0);
    assert!(r.flags.is_empty());
}

#[test]
fn empty_predictions_score_zero_and_flag_missing_truth() {
    let scene = generate_scene(4, &SceneConfig::default()).unwrap();
    let r = pooled_report(&[&evaluate_scene(&lanetopo::DetectionSet::empty(), &scene).unwrap()]).unwrap();
    assert_eq!((r.det_p, r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    let none = pooled_report(&[]).unwrap();
    assert_eq!(none.flags.len(), 5);
}

#[test]
fn perturbation_opens_gaps_and_refinement_closes_them() {
    let scene = generate_scene(11, &SceneConfig::default()).unwrap();
    let d = perturb_scene(&scene, &NoiseSpec::default(), 11).unwrap();
    let before = pooled_report(&[&evaluate_scene(&d, &scene).unwrap()]).unwrap();
    assert!(before.endpoint_gap_mean > 0.0);
    let (r, _) = refine(&d, &RefinementConfig::default());
    let after = pooled_report(&[&evaluate_scene(&r, &scene).unwrap()]).unwrap();
    assert!(after.endpoint_gap_mean < before.endpoint_gap_mean);
}

#[test]
fn pooled_evaluation_and_csv() {
    let scenes: Vec<_> = (0..4).map(|s| generate_scene(s, &SceneConfig::default()).unwrap()).collect();
    let preds: Vec<_> = scenes.iter().map(|s| perturb_scene(s, &NoiseSpec::default(), s.seed).unwrap()).collect();
    let ev = evaluate(&preds, &scenes).unwrap();
    assert_eq!(ev.per_scene.len(), 4);
    assert_eq!(ev.aggregate.scenes, 4);
    ev.aggregate.validate().unwrap();
    let csv = report_csv(&ev, &[]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], REPORT_CSV_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("aggregate,"));
    let back = MetricReport::from_json(&ev.aggregate.to_json().unwrap()).unwrap();
    assert_eq!(back, ev.aggregate);
    assert!(matches!(evaluate(&preds[..1], &scenes), Err(Error::Shape(_))));
}

#[test]
fn tampered_report_fails_validation() {
    let scene = generate_scene(5, &SceneConfig::default()).unwrap();
    let d = perturb_scene(&scene, &NoiseSpec::default(), 5).unwrap();
    let mut r = pooled_report(&[&evaluate_scene(&d, &scene).unwrap()]).unwrap();
    r.ols += 1e-6;
    assert!(matches!(r.validate(), Err(Error::Consistency(_))));
}

#[test]
fn lane_matching_uses_frechet() {
    let gt = vec![straight(0.0, 0.0)];
    let d = lane_distances(&[straight(0.0, 1.5)], &gt).unwrap();
    assert!((d.get(0, 0) - 1.5).abs() < 1e-12);
    let p = point_distances(&[[3.0, 4.0, 0.0]], &[[0.0; 3]]);
    assert_eq!(p.get(0, 0), 5.0);
    assert_eq!(invert(&[Some(1), None, Some(0)], 3), vec![Some(2), Some(0), None]);
}
