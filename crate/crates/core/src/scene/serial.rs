//! Versioned JSON documents for scenes and detections.
//!
//! Floats are written in shortest round-trip form, so a parse of the output
//! reproduces every coordinate bit for bit.

use serde::{Deserialize, Serialize};

use super::{DetectionSet, Lane, Point3, Scene, TrafficDetection, TrafficElement};
use crate::{BinaryMatrix, Error, Matrix, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TrafficDoc {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    cat: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    version: u32,
    seed: u64,
    lanes: Vec<Vec<Point3>>,
    points: Vec<Point3>,
    traffic: Vec<TrafficDoc>,
    g_pl: Vec<[usize; 2]>,
    g_ll: Vec<[usize; 2]>,
    g_lt: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct DetectionDoc {
    version: u32,
    points: Vec<Point3>,
    point_scores: Vec<f64>,
    lanes: Vec<Vec<Point3>>,
    lane_scores: Vec<f64>,
    traffic: Vec<TrafficDoc>,
    g_pl: Matrix,
    g_ll: Matrix,
    g_lt: Matrix,
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported document version {v}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn lanes_from(raw: Vec<Vec<Point3>>) -> Result<Vec<Lane>> {
    raw.into_iter().map(Lane::new).collect()
}

pub(super) fn scene_to_json(s: &Scene) -> Result<String> {
    let doc = SceneDoc {
        version: FORMAT_VERSION,
        seed: s.seed,
        lanes: s.lanes.iter().map(|l| l.points().to_vec()).collect(),
        points: s.points.clone(),
        traffic: s
            .traffic
            .iter()
            .map(|t| TrafficDoc { bbox: t.bbox, cat: t.cat, score: None })
            .collect(),
        g_pl: s.g_pl.edges(),
        g_ll: s.g_ll.edges(),
        g_lt: s.g_lt.edges(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub(super) fn scene_from_json(text: &str) -> Result<Scene> {
    let doc: SceneDoc = serde_json::from_str(text)?;
    check_version(doc.version)?;
    let (np, nl, nt) = (doc.points.len(), doc.lanes.len(), doc.traffic.len());
    Ok(Scene {
        lanes: lanes_from(doc.lanes)?,
        points: doc.points,
        traffic: doc
            .traffic
            .into_iter()
            .map(|t| TrafficElement { bbox: t.bbox, cat: t.cat })
            .collect(),
        g_pl: BinaryMatrix::from_edges(np, nl, &doc.g_pl)?,
        g_ll: BinaryMatrix::from_edges(nl, nl, &doc.g_ll)?,
        g_lt: BinaryMatrix::from_edges(nl, nt, &doc.g_lt)?,
        seed: doc.seed,
    })
}

pub(super) fn detections_to_json(d: &DetectionSet) -> Result<String> {
    let doc = DetectionDoc {
        version: FORMAT_VERSION,
        points: d.points.clone(),
        point_scores: d.point_scores.clone(),
        lanes: d.lanes.iter().map(|l| l.points().to_vec()).collect(),
        lane_scores: d.lane_scores.clone(),
        traffic: d
            .traffic
            .iter()
            .map(|t| TrafficDoc { bbox: t.bbox, cat: t.cat, score: Some(t.score) })
            .collect(),
        g_pl: d.g_pl.clone(),
        g_ll: d.g_ll.clone(),
        g_lt: d.g_lt.clone(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub(super) fn detections_from_json(text: &str) -> Result<DetectionSet> {
    let doc: DetectionDoc = serde_json::from_str(text)?;
    check_version(doc.version)?;
    let traffic = doc
        .traffic
        .into_iter()
        .map(|t| {
            let score = t
                .score
                .ok_or_else(|| Error::Parse("traffic detection without `score`".into()))?;
            Ok(TrafficDetection { bbox: t.bbox, cat: t.cat, score })
        })
        .collect::<Result<Vec<_>>>()?;
    let d = DetectionSet {
        points: doc.points,
        point_scores: doc.point_scores,
        lanes: lanes_from(doc.lanes)?,
        lane_scores: doc.lane_scores,
        traffic,
        g_pl: doc.g_pl,
        g_ll: doc.g_ll,
        g_lt: doc.g_lt,
    };
    d.validate()?;
    Ok(d)
}
