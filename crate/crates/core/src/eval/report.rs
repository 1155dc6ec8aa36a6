//! Per-scene evaluation, pooling across scenes and the metric report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ap::{average_precision, Ranked};
use super::det::{
    category_mean, greedy_match, lane_distances, mean_threshold_ap, point_distances, threshold_rankings, traffic_match,
    DET_THRESHOLDS,
};
use super::gaps::{cluster_gaps, map_clusters, GapReport};
use super::topology::{invert, topology_slots, TOP_LANE_THRESHOLD};
use crate::scene::{DetectionSet, Scene};
use crate::{Error, Result};

/// Lane matching threshold (m) used to carry junctions onto predictions.
pub const GAP_LANE_THRESHOLD: f64 = 3.0;

/// OpenLane-V2 score from components on the 0–100 scale.
pub fn ols(det_l: f64, det_t: f64, top_ll: f64, top_lt: f64) -> Result<f64> {
    for v in [det_l, det_t, top_ll, top_lt] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Contract(format!("OLS component {v} outside [0, 100]")));
        }
    }
    Ok(25.0 * (det_l / 100.0 + det_t / 100.0 + (top_ll / 100.0).sqrt() + (top_lt / 100.0).sqrt()))
}

/// Matched rankings of one scene, kept unreduced so scenes can be pooled.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneEval {
    pub points: Vec<Vec<Ranked>>,
    pub num_points: usize,
    pub lanes: Vec<Vec<Ranked>>,
    pub num_lanes: usize,
    pub traffic: BTreeMap<u32, (Vec<Ranked>, usize)>,
    pub top_ll: (Vec<Ranked>, usize),
    pub top_lt: (Vec<Ranked>, usize),
    pub gaps: Vec<f64>,
}

pub fn evaluate_scene(pred: &DetectionSet, scene: &Scene) -> Result<SceneEval> {
    pred.validate()?;
    let points = threshold_rankings(&point_distances(&pred.points, &scene.points), &pred.point_scores);
    let ld = lane_distances(&pred.lanes, &scene.lanes)?;
    let lanes = threshold_rankings(&ld, &pred.lane_scores);
    let (traffic, tmap) = traffic_match(&pred.traffic, &scene.traffic)?;

    let (_, lmap) = greedy_match(&ld, &pred.lane_scores, TOP_LANE_THRESHOLD);
    let lane_inv = invert(&lmap, scene.lanes.len());
    let traffic_inv = invert(&tmap, scene.traffic.len());
    let top_ll = topology_slots(&pred.g_ll, &scene.g_ll, &lane_inv, &lane_inv, true);
    let top_lt = topology_slots(&pred.g_lt, &scene.g_lt, &lane_inv, &traffic_inv, false);

    let (_, gmap) = greedy_match(&ld, &pred.lane_scores, GAP_LANE_THRESHOLD);
    let clusters = map_clusters(&scene.endpoint_clusters(), &invert(&gmap, scene.lanes.len()));
    let gaps = cluster_gaps(&pred.lanes, &clusters);
    Ok(SceneEval {
        points,
        num_points: scene.points.len(),
        lanes,
        num_lanes: scene.lanes.len(),
        traffic,
        top_ll,
        top_lt,
        gaps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub threshold: f64,
    /// ×100.
    pub ap: f64,
}

/// All scores on the 0–100 scale, gaps in metres.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenes: usize,
    pub det_p: f64,
    pub det_l: f64,
    pub det_t: f64,
    pub top_ll: f64,
    pub top_lt: f64,
    pub ols: f64,
    pub endpoint_gap_mean: f64,
    pub endpoint_gap_max: f64,
    pub det_p_per_threshold: Vec<ThresholdAp>,
    pub det_l_per_threshold: Vec<ThresholdAp>,
    pub det_t_per_category: BTreeMap<u32, f64>,
    pub gap_histogram: Vec<usize>,
    /// Metrics that defaulted to 0 for lack of ground truth.
    pub flags: Vec<String>,
}

fn pool_thresholds(parts: &[&SceneEval], pick: impl Fn(&SceneEval) -> &Vec<Vec<Ranked>>) -> Vec<Vec<Ranked>> {
    let mut out = vec![Vec::new(); DET_THRESHOLDS.len()];
    for p in parts {
        for (o, r) in out.iter_mut().zip(pick(p)) {
            o.extend_from_slice(r);
        }
    }
    out
}

fn per_threshold(rankings: &[Vec<Ranked>], num_gt: usize) -> Vec<ThresholdAp> {
    DET_THRESHOLDS
        .iter()
        .zip(rankings)
        .map(|(&threshold, r)| ThresholdAp { threshold, ap: 100.0 * average_precision(r, num_gt) })
        .collect()
}

/// Pools the rankings of `parts` and reduces them to one report.
pub fn pooled_report(parts: &[&SceneEval]) -> Result<MetricReport> {
    let mut flags = Vec::new();
    let np: usize = parts.iter().map(|p| p.num_points).sum();
    let nl: usize = parts.iter().map(|p| p.num_lanes).sum();
    let pts = pool_thresholds(parts, |p| &p.points);
    let lns = pool_thresholds(parts, |p| &p.lanes);
    let mut cats: BTreeMap<u32, (Vec<Ranked>, usize)> = BTreeMap::new();
    let mut top_ll: (Vec<Ranked>, usize) = (Vec::new(), 0);
    let mut top_lt: (Vec<Ranked>, usize) = (Vec::new(), 0);
    let mut gaps = Vec::new();
    for p in parts {
        for (c, (r, n)) in &p.traffic {
            let e = cats.entry(*c).or_default();
            e.0.extend_from_slice(r);
            e.1 += n;
        }
        top_ll.0.extend_from_slice(&p.top_ll.0);
        top_ll.1 += p.top_ll.1;
        top_lt.0.extend_from_slice(&p.top_lt.0);
        top_lt.1 += p.top_lt.1;
        gaps.extend_from_slice(&p.gaps);
    }
    for (name, n) in [("det_p", np), ("det_l", nl), ("det_t", cats.len()), ("top_ll", top_ll.1), ("top_lt", top_lt.1)] {
        if n == 0 {
            flags.push(format!("{name}: no ground truth"));
        }
    }
    let det_l = mean_threshold_ap(&lns, nl);
    let det_t = category_mean(&cats);
    let tll = 100.0 * average_precision(&top_ll.0, top_ll.1);
    let tlt = 100.0 * average_precision(&top_lt.0, top_lt.1);
    let gap = GapReport::from_gaps(&gaps);
    Ok(MetricReport {
        scenes: parts.len(),
        det_p: mean_threshold_ap(&pts, np),
        det_l,
        det_t,
        top_ll: tll,
        top_lt: tlt,
        ols: ols(det_l, det_t, tll, tlt)?,
        endpoint_gap_mean: gap.mean,
        endpoint_gap_max: gap.max,
        det_p_per_threshold: per_threshold(&pts, np),
        det_l_per_threshold: per_threshold(&lns, nl),
        det_t_per_category: cats.iter().map(|(c, (r, n))| (*c, 100.0 * average_precision(r, *n))).collect(),
        gap_histogram: gap.histogram,
        flags,
    })
}

impl MetricReport {
    /// Checks score ranges and that `ols` agrees with its components.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("det_p", self.det_p),
            ("det_l", self.det_l),
            ("det_t", self.det_t),
            ("top_ll", self.top_ll),
            ("top_lt", self.top_lt),
            ("ols", self.ols),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Consistency(format!("{name} = {v} outside [0, 100]")));
            }
        }
        let again = ols(self.det_l, self.det_t, self.top_ll, self.top_lt)?;
        if (again - self.ols).abs() > 1e-9 {
            return Err(Error::Consistency(format!("stored OLS {} differs from recomputed {again}", self.ols)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub aggregate: MetricReport,
    pub per_scene: Vec<MetricReport>,
}

/// Evaluates prediction/scene pairs; the aggregate pools every scene.
pub fn evaluate(preds: &[DetectionSet], scenes: &[Scene]) -> Result<Evaluation> {
    if preds.len() != scenes.len() {
        return Err(Error::Shape(format!("{} prediction sets for {} scenes", preds.len(), scenes.len())));
    }
    let evals: Vec<SceneEval> = preds
        .par_iter()
        .zip(scenes.par_iter())
        .map(|(p, s)| evaluate_scene(p, s))
        .collect::<Result<_>>()?;
    let per_scene = evals.iter().map(|e| pooled_report(&[e])).collect::<Result<Vec<_>>>()?;
    let all: Vec<&SceneEval> = evals.iter().collect();
    Ok(Evaluation { aggregate: pooled_report(&all)?, per_scene })
}

pub const REPORT_CSV_HEADER: &str = "scene,det_p,det_l,det_t,top_ll,top_lt,ols,endpoint_gap_mean,endpoint_gap_max";

/// One row per scene followed by an `aggregate` row.
pub fn report_csv(ev: &Evaluation, names: &[String]) -> String {
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    let row = |s: &mut String, name: &str, r: &MetricReport| {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{}",
            r.det_p, r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols, r.endpoint_gap_mean, r.endpoint_gap_max
        );
    };
    for (i, r) in ev.per_scene.iter().enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| i.to_string());
        row(&mut s, &name, r);
    }
    row(&mut s, "aggregate", &ev.aggregate);
    s
}

/// Table-style summary with one-decimal scores.
pub fn summary_table(r: &MetricReport) -> String {
    format!(
        "| DET_l | DET_t | TOP_ll | TOP_lt | OLS | DET_p | gap mean (m) |\n\
         |-------|-------|--------|--------|-----|-------|--------------|\n\
         | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.3} |\n",
        r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols, r.det_p, r.endpoint_gap_mean
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_examples() {
        assert!((ols(31.4, 55.3, 28.7, 30.0).unwrap() - 48.8).abs() < 0.05);
        assert!((ols(29.9, 47.2, 23.9, 25.4).unwrap() - 44.1).abs() < 0.05);
        assert_eq!(ols(0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(ols(100.0, 100.0, 100.0, 100.0).unwrap(), 100.0);
        assert!(matches!(ols(101.0, 0.0, 0.0, 0.0), Err(Error::Contract(_))));
    }
}
