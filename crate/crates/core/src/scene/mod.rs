//! Synthetic intersection scenes and a detector-noise model.
//!
//! A [`Scene`] is ground truth: lane centerlines, the de-duplicated set of
//! lane endpoints, abstract traffic elements and the three binary topology
//! matrices. A [`DetectionSet`] is the same content as a detector would emit
//! it: geometry with confidence scores and real-valued topology scores.

mod generate;
mod noise;
mod serial;
mod topology;

pub use generate::{generate_scene, SceneConfig, IMAGE_SIZE};
pub use noise::{perturb_scene, NoiseSpec};
pub use topology::{build_gt_topology, extract_endpoints, quantize, EndpointKey};

use crate::{BinaryMatrix, Error, Matrix, Result};

/// A 3D coordinate in meters (x forward, y left, z up).
pub type Point3 = [f64; 3];

/// Number of traffic element categories.
pub const TRAFFIC_CATEGORIES: usize = 13;

/// Which end of a lane polyline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndFlag {
    Start,
    End,
}

/// A lane centerline: an ordered polyline of at least two 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct Lane {
    points: Vec<Point3>,
}

impl Lane {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Domain(format!(
                "a lane needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("lane has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> Point3 {
        self.points[0]
    }

    pub fn end(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    pub fn endpoint(&self, flag: EndFlag) -> Point3 {
        match flag {
            EndFlag::Start => self.start(),
            EndFlag::End => self.end(),
        }
    }

    /// Overwrites one endpoint; interior points are untouched.
    pub fn set_endpoint(&mut self, flag: EndFlag, p: Point3) {
        let idx = match flag {
            EndFlag::Start => 0,
            EndFlag::End => self.points.len() - 1,
        };
        self.points[idx] = p;
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

impl AsRef<[Point3]> for Lane {
    fn as_ref(&self) -> &[Point3] {
        &self.points
    }
}

/// A 2D traffic element box `[x1, y1, x2, y2]` in front-view pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficElement {
    pub bbox: [f64; 4],
    pub cat: u32,
}

/// Ground-truth scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub lanes: Vec<Lane>,
    pub points: Vec<Point3>,
    pub traffic: Vec<TrafficElement>,
    /// `n_p x n_l`: point is an endpoint of the lane.
    pub g_pl: BinaryMatrix,
    /// `n_l x n_l`: end of lane i is the start of lane j.
    pub g_ll: BinaryMatrix,
    /// `n_l x n_t`: lane is associated with the traffic element.
    pub g_lt: BinaryMatrix,
    pub seed: u64,
}

impl Scene {
    /// Axis-aligned `[min_x, min_y, max_x, max_y]` bounds of all lane points.
    pub fn lane_bounds(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in self.lanes.iter().flat_map(|l| l.points()) {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    /// For each unique point, the lane endpoints that coincide with it.
    pub fn endpoint_clusters(&self) -> Vec<Vec<(usize, EndFlag)>> {
        (0..self.points.len())
            .map(|i| {
                let key = quantize(&self.points[i]);
                let mut members = Vec::new();
                for (j, lane) in self.lanes.iter().enumerate() {
                    for flag in [EndFlag::Start, EndFlag::End] {
                        if quantize(&lane.endpoint(flag)) == key {
                            members.push((j, flag));
                        }
                    }
                }
                members
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serial::scene_to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serial::scene_from_json(text)
    }
}

/// A predicted traffic element.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficDetection {
    pub bbox: [f64; 4],
    pub cat: u32,
    pub score: f64,
}

/// Detector output: scored points, lanes, traffic boxes and topology scores.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSet {
    pub points: Vec<Point3>,
    pub point_scores: Vec<f64>,
    pub lanes: Vec<Lane>,
    pub lane_scores: Vec<f64>,
    pub traffic: Vec<TrafficDetection>,
    pub g_pl: Matrix,
    pub g_ll: Matrix,
    pub g_lt: Matrix,
}

impl DetectionSet {
    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            point_scores: Vec::new(),
            lanes: Vec::new(),
            lane_scores: Vec::new(),
            traffic: Vec::new(),
            g_pl: Matrix::zeros(0, 0),
            g_ll: Matrix::zeros(0, 0),
            g_lt: Matrix::zeros(0, 0),
        }
    }

    /// Checks count/shape consistency and that every score lies in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let (np, nl, nt) = (self.points.len(), self.lanes.len(), self.traffic.len());
        if self.point_scores.len() != np || self.lane_scores.len() != nl {
            return Err(Error::Shape("score array length differs from instance count".into()));
        }
        let shapes = [
            ("g_pl", &self.g_pl, np, nl),
            ("g_ll", &self.g_ll, nl, nl),
            ("g_lt", &self.g_lt, nl, nt),
        ];
        for (name, m, r, c) in shapes {
            // An empty side may be serialized as `[]`, which loses the column count.
            let empty_ok = (r == 0 || c == 0) && m.data().is_empty();
            if !empty_ok && (m.rows() != r || m.cols() != c) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        let scores = self
            .point_scores
            .iter()
            .chain(&self.lane_scores)
            .chain(self.traffic.iter().map(|t| &t.score))
            .chain(self.g_pl.data())
            .chain(self.g_ll.data())
            .chain(self.g_lt.data());
        for &s in scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Domain(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serial::detections_to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serial::detections_from_json(text)
    }
}
