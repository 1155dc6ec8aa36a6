use lanetopo::plgm::{random_detections, refine, refine_oracle, RefinementConfig};
use lanetopo::scene::{generate_scene, perturb_scene, EndFlag};
use lanetopo::{NoiseSpec, Point3, SceneConfig};
use proptest::prelude::*;

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[test]
fn matches_oracle_on_one_hundred_random_sets() {
    for seed in 0..100 {
        let d = random_detections(seed, 5 + (seed as usize % 20), 5 + (seed as usize % 30), 30.0);
        let (r, _) = refine(&d, &RefinementConfig::default());
        let oracle = refine_oracle(&d, &RefinementConfig::default());
        for (lane, want) in r.lanes.iter().zip(&oracle) {
            assert_eq!(lane.points(), want.as_slice(), "seed {seed}");
        }
    }
}

proptest! {
    #[test]
    fn refinement_invariants(
        seed in any::<u64>(),
        np in 0usize..25,
        nl in 0usize..40,
        tau_p in 0.0f64..0.8,
        tau_l in 0.0f64..0.8,
        delta in 0.2f64..3.0,
    ) {
        let d = random_detections(seed, np, nl, 25.0);
        let cfg = RefinementConfig { tau_p, tau_l, delta };
        let (r, trace) = refine(&d, &cfg);
        let oracle = refine_oracle(&d, &cfg);
        for (lane, want) in r.lanes.iter().zip(&oracle) {
            prop_assert_eq!(lane.points(), want.as_slice());
        }

        prop_assert_eq!(&r.points, &d.points);
        prop_assert_eq!(&r.point_scores, &d.point_scores);
        prop_assert_eq!(&r.lane_scores, &d.lane_scores);
        prop_assert_eq!(&r.g_pl, &d.g_pl);
        prop_assert_eq!(&r.g_ll, &d.g_ll);
        prop_assert_eq!(r.lanes.len(), d.lanes.len());
        for (a, b) in r.lanes.iter().zip(&d.lanes) {
            let n = a.len();
            prop_assert_eq!(&a.points()[1..n - 1], &b.points()[1..n - 1]);
        }

        let mut claimed = std::collections::BTreeSet::new();
        for c in &trace.clusters {
            prop_assert!(d.point_scores[c.point] > tau_p);
            let p = d.points[c.point];
            let mut lo = p;
            let mut hi = p;
            let mut sum = p;
            for &(j, f) in &c.members {
                prop_assert!(claimed.insert((j, f == EndFlag::End)));
                prop_assert!(d.lane_scores[j] > tau_l);
                let orig = d.lanes[j].endpoint(f);
                prop_assert!(dist(&orig, &p) < delta);
                prop_assert_eq!(r.lanes[j].endpoint(f), c.refined);
                for k in 0..3 {
                    lo[k] = lo[k].min(orig[k]);
                    hi[k] = hi[k].max(orig[k]);
                    sum[k] += orig[k];
                }
            }
            let n = (c.members.len() + 1) as f64;
            for k in 0..3 {
                prop_assert!(c.refined[k] >= lo[k] - 1e-12 && c.refined[k] <= hi[k] + 1e-12);
                prop_assert!((c.refined[k] - sum[k] / n).abs() < 1e-9);
            }
        }
        for m in &trace.moved {
            prop_assert!(m.distance < 2.0 * delta);
            prop_assert_eq!(m.distance, dist(&d.lanes[m.lane].endpoint(m.end), &r.lanes[m.lane].endpoint(m.end)));
        }
        for (j, (a, b)) in r.lanes.iter().zip(&d.lanes).enumerate() {
            for f in [EndFlag::Start, EndFlag::End] {
                if !claimed.contains(&(j, f == EndFlag::End)) {
                    prop_assert_eq!(a.endpoint(f), b.endpoint(f));
                }
            }
        }
    }

    #[test]
    fn refinement_is_deterministic(seed in any::<u64>()) {
        let d = random_detections(seed, 15, 25, 20.0);
        prop_assert_eq!(refine(&d, &RefinementConfig::default()), refine(&d, &RefinementConfig::default()));
    }
}

#[test]
fn perturbed_junctions_close_up() {
    for seed in 0..10 {
        let scene = generate_scene(seed, &SceneConfig::default()).unwrap();
        let d = perturb_scene(&scene, &NoiseSpec::default(), seed).unwrap();
        let (r, trace) = refine(&d, &RefinementConfig::default());
        assert!(!trace.clusters.is_empty());
        let clusters: Vec<_> = scene.endpoint_clusters().into_iter().filter(|c| c.len() > 1).collect();
        let before = lanetopo::eval::endpoint_gap_report(&d.lanes, &clusters);
        let after = lanetopo::eval::endpoint_gap_report(&r.lanes, &clusters);
        assert!(after.mean < before.mean, "seed {seed}: {} -> {}", before.mean, after.mean);
    }
}
