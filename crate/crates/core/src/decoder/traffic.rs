//! Stand-in traffic-element detector.
//!
//! Boxes come straight from ground truth, optionally jittered, and are
//! returned as the traffic predictions. Each slot's raw feature row is the
//! normalised box followed by a one-hot category; the decoder embeds it with
//! a learned linear map. Unused slots are zero rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scene::{Scene, TrafficDetection, IMAGE_SIZE, TRAFFIC_CATEGORIES};
use crate::{Error, Matrix, Result};

pub const TRAFFIC_FEATURES: usize = 4 + TRAFFIC_CATEGORIES;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrafficNoise {
    /// Std of the Gaussian jitter on each box coordinate (pixels).
    pub box_sigma: f64,
    /// Scores are `1 - U(0, score_noise)`.
    pub score_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficInput {
    /// `n_t × TRAFFIC_FEATURES`.
    pub raw: Matrix,
    pub detections: Vec<TrafficDetection>,
}

impl TrafficInput {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

pub fn traffic_stub(scene: &Scene, n_t: usize, noise: &TrafficNoise, seed: u64) -> Result<TrafficInput> {
    if !(noise.box_sigma >= 0.0 && (0.0..=1.0).contains(&noise.score_noise)) {
        return Err(Error::Config(format!("invalid traffic noise {noise:?}")));
    }
    if scene.traffic.len() > n_t {
        log::warn!(
            "scene {} has {} traffic elements, keeping the first {n_t}",
            scene.seed,
            scene.traffic.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Matrix::zeros(n_t, TRAFFIC_FEATURES);
    let mut detections = Vec::new();
    for (i, t) in scene.traffic.iter().take(n_t).enumerate() {
        let mut b = t.bbox;
        if noise.box_sigma > 0.0 {
            for v in b.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += noise.box_sigma * z;
            }
            if b[2] <= b[0] {
                b[2] = b[0] + 1.0;
            }
            if b[3] <= b[1] {
                b[3] = b[1] + 1.0;
            }
        }
        let score = 1.0 - noise.score_noise * rng.random::<f64>();
        let row = raw.row_mut(i);
        row[0] = b[0] / IMAGE_SIZE[0];
        row[1] = b[1] / IMAGE_SIZE[1];
        row[2] = b[2] / IMAGE_SIZE[0];
        row[3] = b[3] / IMAGE_SIZE[1];
        row[4 + (t.cat as usize).min(TRAFFIC_CATEGORIES - 1)] = 1.0;
        detections.push(TrafficDetection { bbox: b, cat: t.cat, score });
    }
    Ok(TrafficInput { raw, detections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};

    #[test]
    fn zero_noise_passes_boxes_through() {
        let s = generate_scene(3, &SceneConfig::default()).unwrap();
        let t = traffic_stub(&s, 10, &TrafficNoise::default(), 0).unwrap();
        assert_eq!(t.len(), s.traffic.len());
        for (d, g) in t.detections.iter().zip(&s.traffic) {
            assert_eq!(d.bbox, g.bbox);
            assert_eq!(d.score, 1.0);
        }
        assert!(t.raw.row(9).iter().all(|v| *v == 0.0));
        assert_eq!(t.raw.row(0)[4..].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn truncates_to_slot_count() {
        let s = generate_scene(3, &SceneConfig::default()).unwrap();
        let t = traffic_stub(&s, 2, &TrafficNoise::default(), 0).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.raw.rows(), 2);
    }

    #[test]
    fn noise_is_seeded() {
        let s = generate_scene(3, &SceneConfig::default()).unwrap();
        let n = TrafficNoise { box_sigma: 5.0, score_noise: 0.2 };
        assert_eq!(traffic_stub(&s, 10, &n, 4).unwrap(), traffic_stub(&s, 10, &n, 4).unwrap());
        assert_ne!(traffic_stub(&s, 10, &n, 4).unwrap(), traffic_stub(&s, 10, &n, 5).unwrap());
    }
}
