use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DetectionSet, Lane, Point3, Scene, TrafficDetection};
use crate::config::{parse_value, unknown_key, Section};
use crate::{Error, Matrix, Result};

/// Detector-noise model used to turn ground truth into predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Std (m) of the independent Gaussian offset applied to each lane start,
    /// each lane end and each predicted point.
    pub endpoint_sigma: f64,
    /// Std (m) applied to interior lane points.
    pub interior_sigma: f64,
    /// Probability that a ground-truth lane or point is not detected.
    pub drop_rate: f64,
    /// Per ground-truth instance probability of an extra false detection.
    pub spurious_rate: f64,
    /// Scores of true detections are `1 - U(0, score_noise)`.
    pub score_noise: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            endpoint_sigma: 0.5,
            interior_sigma: 0.05,
            drop_rate: 0.0,
            spurious_rate: 0.0,
            score_noise: 0.1,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            endpoint_sigma: 0.0,
            interior_sigma: 0.0,
            drop_rate: 0.0,
            spurious_rate: 0.0,
            score_noise: 0.0,
        }
    }
}

impl Section for NoiseSpec {
    const PREFIX: &'static str = "noise";

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "endpoint_sigma" => self.endpoint_sigma = parse_value(key, value)?,
            "interior_sigma" => self.interior_sigma = parse_value(key, value)?,
            "drop_rate" => self.drop_rate = parse_value(key, value)?,
            "spurious_rate" => self.spurious_rate = parse_value(key, value)?,
            "score_noise" => self.score_noise = parse_value(key, value)?,
            _ => return Err(unknown_key(Self::PREFIX, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("endpoint_sigma", self.endpoint_sigma),
            ("interior_sigma", self.interior_sigma),
            ("score_noise", self.score_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("drop_rate", self.drop_rate),
            ("spurious_rate", self.spurious_rate),
            ("score_noise", self.score_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

fn jitter(rng: &mut ChaCha8Rng, p: Point3, sigma: f64) -> Point3 {
    p.map(|v| {
        let n: f64 = rng.sample(StandardNormal);
        v + sigma * n
    })
}

/// Produces detector-like predictions from a ground-truth scene.
///
/// Surviving lanes keep their ground-truth order, followed by spurious
/// lanes; points likewise. Because each lane's endpoints are displaced
/// independently, endpoints shared in ground truth no longer coincide.
/// Topology scores are `1 - U(0, score_noise)` for true pairs and
/// `U(0, score_noise)` otherwise.
pub fn perturb_scene(scene: &Scene, noise: &NoiseSpec, seed: u64) -> Result<DetectionSet> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = scene.lanes.first().map_or(2, Lane::len);
    let b = scene.lane_bounds();

    let mut lanes = Vec::new();
    let mut lane_scores = Vec::new();
    // Ground-truth index of every prediction; `None` for spurious ones.
    let mut lane_src: Vec<Option<usize>> = Vec::new();
    for (j, lane) in scene.lanes.iter().enumerate() {
        if rng.random::<f64>() < noise.drop_rate {
            continue;
        }
        let n = lane.len();
        let pts: Vec<Point3> = lane
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let sigma = if i == 0 || i == n - 1 { noise.endpoint_sigma } else { noise.interior_sigma };
                jitter(&mut rng, *p, sigma)
            })
            .collect();
        lanes.push(Lane::new(pts)?);
        lane_scores.push(1.0 - noise.score_noise * rng.random::<f64>());
        lane_src.push(Some(j));
    }
    for _ in 0..scene.lanes.len() {
        if rng.random::<f64>() >= noise.spurious_rate {
            continue;
        }
        let start = [
            b[0] + (b[2] - b[0]) * rng.random::<f64>(),
            b[1] + (b[3] - b[1]) * rng.random::<f64>(),
            0.0,
        ];
        let heading = std::f64::consts::TAU * rng.random::<f64>();
        let len = 5.0 + 10.0 * rng.random::<f64>();
        let pts = (0..k)
            .map(|i| {
                let t = len * i as f64 / (k - 1).max(1) as f64;
                [start[0] + t * heading.cos(), start[1] + t * heading.sin(), 0.0]
            })
            .collect();
        lanes.push(Lane::new(pts)?);
        lane_scores.push(0.5 * rng.random::<f64>());
        lane_src.push(None);
    }

    let mut points = Vec::new();
    let mut point_scores = Vec::new();
    let mut point_src: Vec<Option<usize>> = Vec::new();
    for (i, p) in scene.points.iter().enumerate() {
        if rng.random::<f64>() < noise.drop_rate {
            continue;
        }
        points.push(jitter(&mut rng, *p, noise.endpoint_sigma));
        point_scores.push(1.0 - noise.score_noise * rng.random::<f64>());
        point_src.push(Some(i));
    }
    for _ in 0..scene.points.len() {
        if rng.random::<f64>() >= noise.spurious_rate {
            continue;
        }
        points.push([
            b[0] + (b[2] - b[0]) * rng.random::<f64>(),
            b[1] + (b[3] - b[1]) * rng.random::<f64>(),
            0.0,
        ]);
        point_scores.push(0.5 * rng.random::<f64>());
        point_src.push(None);
    }

    let traffic: Vec<TrafficDetection> = scene
        .traffic
        .iter()
        .map(|t| TrafficDetection {
            bbox: t.bbox,
            cat: t.cat,
            score: 1.0 - noise.score_noise * rng.random::<f64>(),
        })
        .collect();

    let sn = noise.score_noise;
    let score = |truth: bool, rng: &mut ChaCha8Rng| {
        let j = sn * rng.random::<f64>();
        if truth {
            1.0 - j
        } else {
            j
        }
    };
    let mut g_pl = Matrix::zeros(points.len(), lanes.len());
    for (pi, ps) in point_src.iter().enumerate() {
        for (li, ls) in lane_src.iter().enumerate() {
            let truth = matches!((ps, ls), (Some(a), Some(b)) if scene.g_pl.get(*a, *b));
            g_pl.set(pi, li, score(truth, &mut rng));
        }
    }
    let mut g_ll = Matrix::zeros(lanes.len(), lanes.len());
    for (ai, a) in lane_src.iter().enumerate() {
        for (bi, bs) in lane_src.iter().enumerate() {
            let truth = matches!((a, bs), (Some(x), Some(y)) if scene.g_ll.get(*x, *y));
            g_ll.set(ai, bi, score(truth, &mut rng));
        }
    }
    let mut g_lt = Matrix::zeros(lanes.len(), traffic.len());
    for (li, ls) in lane_src.iter().enumerate() {
        for t in 0..traffic.len() {
            let truth = matches!(ls, Some(x) if scene.g_lt.get(*x, t));
            g_lt.set(li, t, score(truth, &mut rng));
        }
    }

    Ok(DetectionSet {
        points,
        point_scores,
        lanes,
        lane_scores,
        traffic,
        g_pl,
        g_ll,
        g_lt,
    })
}
