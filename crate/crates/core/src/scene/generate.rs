use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_gt_topology, extract_endpoints, Lane, Point3, Scene, TrafficElement, TRAFFIC_CATEGORIES};
use crate::config::{parse_value, unknown_key, Section};
use crate::{Error, Result};

/// Front-view image size used to place abstract traffic boxes.
pub const IMAGE_SIZE: [f64; 2] = [2048.0, 1550.0];

/// Parameters of the synthetic intersection generator.
///
/// Each arm carries `lanes_per_arm` incoming and `lanes_per_arm` outgoing
/// straight lanes. Every incoming lane `i` of arm `a` is joined to outgoing
/// lane `i` of every other arm by a cubic Bézier connector.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub arms: usize,
    pub lanes_per_arm: usize,
    /// Points per lane.
    pub k: usize,
    /// BEV half-extent along x (meters).
    pub extent_x: f64,
    /// BEV half-extent along y (meters).
    pub extent_y: f64,
    pub lane_width: f64,
    /// Distance from the junction center to the stop line of each arm.
    pub junction_radius: f64,
    /// Length of the straight approach and exit lanes.
    pub arm_length: f64,
    pub angle_jitter_deg: f64,
    pub radius_jitter: f64,
    pub length_jitter: f64,
    pub center_jitter: f64,
    pub elevation_jitter: f64,
    /// Bézier handle length as a fraction of the connector chord.
    pub bezier_handle: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            arms: 4,
            lanes_per_arm: 1,
            k: 11,
            extent_x: 30.0,
            extent_y: 30.0,
            lane_width: 3.5,
            junction_radius: 9.0,
            arm_length: 16.0,
            angle_jitter_deg: 8.0,
            radius_jitter: 1.0,
            length_jitter: 2.0,
            center_jitter: 1.0,
            elevation_jitter: 0.2,
            bezier_handle: 0.4,
        }
    }
}

impl Section for SceneConfig {
    const PREFIX: &'static str = "scene";

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "arms" => self.arms = parse_value(key, value)?,
            "lanes_per_arm" => self.lanes_per_arm = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "extent_x" => self.extent_x = parse_value(key, value)?,
            "extent_y" => self.extent_y = parse_value(key, value)?,
            "lane_width" => self.lane_width = parse_value(key, value)?,
            "junction_radius" => self.junction_radius = parse_value(key, value)?,
            "arm_length" => self.arm_length = parse_value(key, value)?,
            "angle_jitter_deg" => self.angle_jitter_deg = parse_value(key, value)?,
            "radius_jitter" => self.radius_jitter = parse_value(key, value)?,
            "length_jitter" => self.length_jitter = parse_value(key, value)?,
            "center_jitter" => self.center_jitter = parse_value(key, value)?,
            "elevation_jitter" => self.elevation_jitter = parse_value(key, value)?,
            "bezier_handle" => self.bezier_handle = parse_value(key, value)?,
            _ => return Err(unknown_key(Self::PREFIX, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.arms) {
            return Err(Error::Config(format!("arms must be in [2, 4], got {}", self.arms)));
        }
        if self.lanes_per_arm == 0 {
            return Err(Error::Config("lanes_per_arm must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        let positive = [
            ("extent_x", self.extent_x),
            ("extent_y", self.extent_y),
            ("lane_width", self.lane_width),
            ("junction_radius", self.junction_radius),
            ("arm_length", self.arm_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let jitters = [
            ("angle_jitter_deg", self.angle_jitter_deg),
            ("radius_jitter", self.radius_jitter),
            ("length_jitter", self.length_jitter),
            ("center_jitter", self.center_jitter),
            ("elevation_jitter", self.elevation_jitter),
            ("bezier_handle", self.bezier_handle),
        ];
        for (name, v) in jitters {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.radius_jitter >= self.junction_radius || self.length_jitter >= self.arm_length {
            return Err(Error::Config("jitter must be smaller than the nominal length".into()));
        }
        let along = self.junction_radius + self.radius_jitter + self.arm_length + self.length_jitter;
        let lateral = self.lane_width * (self.lanes_per_arm as f64 - 0.5);
        let reach = along.hypot(lateral) + self.center_jitter * 2f64.sqrt();
        if reach > self.extent_x.min(self.extent_y) {
            return Err(Error::Config(format!(
                "arms reach {reach:.2} m, beyond the BEV extent"
            )));
        }
        Ok(())
    }
}

struct Arm {
    dir: [f64; 2],
    normal: [f64; 2],
    radius: f64,
    length: f64,
    far_z: f64,
    angle: f64,
}

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn straight(start: Point3, end: Point3, k: usize) -> Vec<Point3> {
    let mut pts: Vec<Point3> = (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            add(scale(start, 1.0 - t), scale(end, t))
        })
        .collect();
    // Endpoints must be bit-identical to the shared junction coordinates.
    pts[0] = start;
    pts[k - 1] = end;
    pts
}

fn bezier(p0: Point3, p1: Point3, p2: Point3, p3: Point3, k: usize) -> Vec<Point3> {
    let mut pts: Vec<Point3> = (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            let u = 1.0 - t;
            let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
            let mut p = [0.0; 3];
            for (ctrl, wi) in [p0, p1, p2, p3].iter().zip(w) {
                p = add(p, scale(*ctrl, wi));
            }
            p
        })
        .collect();
    pts[0] = p0;
    pts[k - 1] = p3;
    pts
}

/// Generates a deterministic intersection scene for `(seed, cfg)`.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sym = |rng: &mut ChaCha8Rng, half: f64| half * (2.0 * rng.random::<f64>() - 1.0);

    let center = [sym(&mut rng, cfg.center_jitter), sym(&mut rng, cfg.center_jitter), 0.0];
    let arms: Vec<Arm> = (0..cfg.arms)
        .map(|a| {
            let angle = a as f64 * 2.0 * PI / cfg.arms as f64
                + sym(&mut rng, cfg.angle_jitter_deg.to_radians());
            let (s, c) = angle.sin_cos();
            Arm {
                dir: [c, s],
                normal: [-s, c],
                radius: cfg.junction_radius + sym(&mut rng, cfg.radius_jitter),
                length: cfg.arm_length + sym(&mut rng, cfg.length_jitter),
                far_z: sym(&mut rng, cfg.elevation_jitter),
                angle,
            }
        })
        .collect();

    let at = |arm: &Arm, along: f64, lateral: f64, z: f64| -> Point3 {
        [
            center[0] + arm.dir[0] * along + arm.normal[0] * lateral,
            center[1] + arm.dir[1] * along + arm.normal[1] * lateral,
            z,
        ]
    };

    let m = cfg.lanes_per_arm;
    let mut lanes = Vec::new();
    let mut assignments: Vec<Vec<usize>> = Vec::new();
    // Right-hand traffic: incoming lanes sit on +normal, outgoing on -normal.
    let mut entry = vec![vec![[0.0; 3]; m]; cfg.arms];
    let mut exit = vec![vec![[0.0; 3]; m]; cfg.arms];
    for (a, arm) in arms.iter().enumerate() {
        for i in 0..m {
            let off = (i as f64 + 0.5) * cfg.lane_width;
            let far = at(arm, arm.radius + arm.length, off, arm.far_z);
            entry[a][i] = at(arm, arm.radius, off, 0.0);
            lanes.push(Lane::new(straight(far, entry[a][i], cfg.k))?);
            assignments.push(vec![a]);
        }
    }
    for (a, arm) in arms.iter().enumerate() {
        for i in 0..m {
            let off = (i as f64 + 0.5) * cfg.lane_width;
            exit[a][i] = at(arm, arm.radius, -off, 0.0);
            let far = at(arm, arm.radius + arm.length, -off, arm.far_z);
            lanes.push(Lane::new(straight(exit[a][i], far, cfg.k))?);
            assignments.push(Vec::new());
        }
    }
    for (a, arm_in) in arms.iter().enumerate() {
        for i in 0..m {
            for (b, arm_out) in arms.iter().enumerate() {
                if a == b {
                    continue;
                }
                let p0 = entry[a][i];
                let p3 = exit[b][i];
                let chord = ((p3[0] - p0[0]).powi(2) + (p3[1] - p0[1]).powi(2)).sqrt();
                let h = cfg.bezier_handle * chord;
                let p1 = [p0[0] - arm_in.dir[0] * h, p0[1] - arm_in.dir[1] * h, 0.0];
                let p2 = [p3[0] - arm_out.dir[0] * h, p3[1] - arm_out.dir[1] * h, 0.0];
                lanes.push(Lane::new(bezier(p0, p1, p2, p3, cfg.k))?);
                assignments.push(vec![a]);
            }
        }
    }

    for p in lanes.iter().flat_map(|l| l.points()) {
        if p[0].abs() > cfg.extent_x || p[1].abs() > cfg.extent_y {
            return Err(Error::Config(format!("lane point {p:?} outside the BEV extent")));
        }
    }

    let traffic: Vec<TrafficElement> = arms
        .iter()
        .map(|arm| {
            let cx = IMAGE_SIZE[0] / 2.0 - 800.0 * arm.angle.sin() + sym(&mut rng, 40.0);
            let cy = 500.0 + 150.0 * arm.angle.cos() + sym(&mut rng, 40.0);
            let w = 40.0 + 50.0 * rng.random::<f64>();
            let h = 40.0 + 50.0 * rng.random::<f64>();
            TrafficElement {
                bbox: [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0],
                cat: rng.random_range(0..TRAFFIC_CATEGORIES as u32),
            }
        })
        .collect();

    let points = extract_endpoints(&lanes);
    let (g_pl, g_ll, g_lt) = build_gt_topology(&lanes, &points, &assignments, traffic.len())?;
    Ok(Scene {
        lanes,
        points,
        traffic,
        g_pl,
        g_ll,
        g_lt,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::quantize;

    #[test]
    fn four_arm_junctions_are_shared() {
        let s = generate_scene(7, &SceneConfig::default()).unwrap();
        // 4 incoming + 4 outgoing + 4*3 connectors.
        assert_eq!(s.lanes.len(), 20);
        assert_eq!(s.points.len(), 16);
        let junction_rows = (0..s.points.len()).filter(|&i| s.g_pl.row_count(i) >= 2).count();
        assert_eq!(junction_rows, 8);
        for j in 0..s.lanes.len() {
            assert_eq!(s.g_pl.col_count(j), 2);
        }
        // Entry points: one incoming lane end plus three connector starts.
        for (i, members) in s.endpoint_clusters().iter().enumerate() {
            assert_eq!(members.len(), s.g_pl.row_count(i));
            let key = quantize(&s.points[i]);
            for &(j, flag) in members {
                assert_eq!(quantize(&s.lanes[j].endpoint(flag)), key);
                assert_eq!(s.lanes[j].endpoint(flag), s.points[i]);
            }
        }
        assert_eq!(s.g_ll.count(), 24);
        assert_eq!(s.traffic.len(), 4);
    }

    #[test]
    fn connectivity_matches_exact_l1_zero() {
        for seed in 0..5 {
            let s = generate_scene(seed, &SceneConfig { arms: 3, lanes_per_arm: 2, ..Default::default() })
                .unwrap();
            for i in 0..s.lanes.len() {
                for j in 0..s.lanes.len() {
                    let e = s.lanes[i].end();
                    let st = s.lanes[j].start();
                    let l1: f64 = (0..3).map(|a| (e[a] - st[a]).abs()).sum();
                    assert_eq!(s.g_ll.get(i, j), l1 == 0.0);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SceneConfig::default();
        let a = generate_scene(7, &cfg).unwrap().to_json().unwrap();
        let b = generate_scene(7, &cfg).unwrap().to_json().unwrap();
        let c = generate_scene(8, &cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SceneConfig { k: 1, ..Default::default() },
            SceneConfig { lanes_per_arm: 0, ..Default::default() },
            SceneConfig { arms: 5, ..Default::default() },
            SceneConfig { extent_x: 10.0, ..Default::default() },
        ] {
            assert!(matches!(generate_scene(1, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn two_arm_road() {
        let s = generate_scene(3, &SceneConfig { arms: 2, ..Default::default() }).unwrap();
        assert_eq!(s.lanes.len(), 6);
        assert_eq!(s.g_ll.count(), 4);
    }
}
