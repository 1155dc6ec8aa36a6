//! Set matching and the per-layer supervision terms.

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian_match;
use crate::decoder::{ModelConfig, Predictions, TrafficInput};
use crate::nn::graph::focal_value;
use crate::nn::{Graph, Var};
use crate::scene::{Scene, IMAGE_SIZE};
use crate::{BinaryMatrix, Error, Matrix, Result};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// Weight of the geometric term in the matching cost.
pub const MATCH_GEOMETRY_WEIGHT: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_p: f64,
    pub lambda_l: f64,
    pub lambda_pl: f64,
    pub lambda_ll: f64,
    pub lambda_lt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_t: 1.0, lambda_p: 1.0, lambda_l: 1.0, lambda_pl: 5.0, lambda_ll: 5.0, lambda_lt: 5.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { lambda_t: 0.0, lambda_p: 0.0, lambda_l: 0.0, lambda_pl: 0.0, lambda_ll: 0.0, lambda_lt: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_t, self.lambda_p, self.lambda_l, self.lambda_pl, self.lambda_ll, self.lambda_lt];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Matched `(prediction, ground truth)` pairs for each element type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub point_matches: Vec<(usize, usize)>,
    pub lane_matches: Vec<(usize, usize)>,
    pub traffic_matches: Vec<(usize, usize)>,
}

impl Assignment {
    /// Checks one-to-one matching and index ranges against
    /// `(predictions, ground truth)` counts per type.
    pub fn validate(&self, points: (usize, usize), lanes: (usize, usize), traffic: (usize, usize)) -> Result<()> {
        for (what, pairs, (np, ng)) in [
            ("point", &self.point_matches, points),
            ("lane", &self.lane_matches, lanes),
            ("traffic", &self.traffic_matches, traffic),
        ] {
            let mut seen_p = vec![false; np];
            let mut seen_g = vec![false; ng];
            for &(p, g) in pairs {
                if p >= np || g >= ng || seen_p[p] || seen_g[g] {
                    return Err(Error::Consistency(format!("invalid {what} match ({p}, {g})")));
                }
                seen_p[p] = true;
                seen_g[g] = true;
            }
        }
        Ok(())
    }
}

/// Weighted contributions of each loss term, summed over layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub t: f64,
    pub p: f64,
    pub l: f64,
    pub pl: f64,
    pub ll: f64,
    pub lt: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 6] = ["t", "p", "l", "pl", "ll", "lt"];

    pub fn values(&self) -> [f64; 6] {
        [self.t, self.p, self.l, self.pl, self.ll, self.lt]
    }

    pub fn sum(&self) -> f64 {
        self.values().iter().sum()
    }

    fn accumulate(&mut self, o: &LossTerms) {
        self.t += o.t;
        self.p += o.p;
        self.l += o.l;
        self.pl += o.pl;
        self.ll += o.ll;
        self.lt += o.lt;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: LossTerms,
    pub per_layer: Vec<f64>,
}

/// Focal loss of a probability against a binary label; `p` is clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(p: f64, y: bool, alpha: f64, gamma: f64) -> f64 {
    focal_value(p, if y { 1.0 } else { 0.0 }, alpha, gamma)
}

/// Mean absolute error over paired coordinates; no coordinates gives 0.
pub fn l1_reg_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("l1 loss over {} and {} values", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        log::warn!("l1 loss with no matched coordinates");
        return Ok(0.0);
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

fn check_box(b: &[f64; 4]) -> Result<()> {
    if b[0] < b[2] && b[1] < b[3] {
        Ok(())
    } else {
        Err(Error::Contract(format!("degenerate box {b:?}")))
    }
}

/// Generalised IoU of two `[x1, y1, x2, y2]` boxes.
pub fn giou(a: &[f64; 4], b: &[f64; 4]) -> Result<f64> {
    check_box(a)?;
    check_box(b)?;
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    let c = (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]));
    Ok(inter / union - (c - union) / c)
}

pub fn giou_loss(a: &[f64; 4], b: &[f64; 4]) -> Result<f64> {
    Ok(1.0 - giou(a, b)?)
}

/// Row-wise `1 - GIoU` of two `N×4` box matrices on the tape.
pub fn giou_loss_rows(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let col = |g: &mut Graph, m: Var, c: usize| g.slice_cols(m, c, 1);
    let (ax1, ay1, ax2, ay2) = (col(g, a, 0)?, col(g, a, 1)?, col(g, a, 2)?, col(g, a, 3)?);
    let (bx1, by1, bx2, by2) = (col(g, b, 0)?, col(g, b, 1)?, col(g, b, 2)?, col(g, b, 3)?);
    let area = |g: &mut Graph, x1: Var, y1: Var, x2: Var, y2: Var| -> Result<Var> {
        let w = g.sub(x2, x1)?;
        let h = g.sub(y2, y1)?;
        g.mul(w, h)
    };
    let area_a = area(g, ax1, ay1, ax2, ay2)?;
    let area_b = area(g, bx1, by1, bx2, by2)?;
    let (ix1, iy1) = (g.max(ax1, bx1)?, g.max(ay1, by1)?);
    let (ix2, iy2) = (g.min(ax2, bx2)?, g.min(ay2, by2)?);
    let iw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;
    let sum = g.add(area_a, area_b)?;
    let union = g.sub(sum, inter)?;
    let (cx1, cy1) = (g.min(ax1, bx1)?, g.min(ay1, by1)?);
    let (cx2, cy2) = (g.max(ax2, bx2)?, g.max(ay2, by2)?);
    let c = area(g, cx1, cy1, cx2, cy2)?;
    let iou = g.div(inter, union)?;
    let gap = g.sub(c, union)?;
    let frac = g.div(gap, c)?;
    let giou = g.sub(iou, frac)?;
    let neg = g.scale(giou, -1.0);
    Ok(g.offset(neg, 1.0))
}

/// Ground truth of one scene in the decoder's layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    /// `P×3`.
    pub points: Matrix,
    /// `L×3k`.
    pub lanes: Matrix,
    /// `T×4`, boxes divided by the image size.
    pub boxes: Matrix,
    pub g_pl: BinaryMatrix,
    pub g_ll: BinaryMatrix,
    pub g_lt: BinaryMatrix,
}

pub fn normalized_box(b: &[f64; 4]) -> [f64; 4] {
    [b[0] / IMAGE_SIZE[0], b[1] / IMAGE_SIZE[1], b[2] / IMAGE_SIZE[0], b[3] / IMAGE_SIZE[1]]
}

impl Target {
    pub fn from_scene(scene: &Scene, cfg: &ModelConfig) -> Result<Self> {
        let mut lanes = Matrix::zeros(scene.lanes.len(), 3 * cfg.k);
        for (i, lane) in scene.lanes.iter().enumerate() {
            if lane.len() != cfg.k {
                return Err(Error::Shape(format!(
                    "scene {} lane {i} has {} points, model.k = {}",
                    scene.seed,
                    lane.len(),
                    cfg.k
                )));
            }
            for (j, p) in lane.points().iter().enumerate() {
                lanes.row_mut(i)[3 * j..3 * j + 3].copy_from_slice(p);
            }
        }
        let points = Matrix::from_vec(scene.points.len(), 3, scene.points.iter().flatten().copied().collect())?;
        let boxes = Matrix::from_vec(
            scene.traffic.len(),
            4,
            scene.traffic.iter().flat_map(|t| normalized_box(&t.bbox)).collect(),
        )?;
        Ok(Self {
            points,
            lanes,
            boxes,
            g_pl: scene.g_pl.clone(),
            g_ll: scene.g_ll.clone(),
            g_lt: scene.g_lt.clone(),
        })
    }
}

/// Focal matching cost of predicting a positive with probability `p`.
fn cls_cost(p: f64) -> f64 {
    focal_loss(p, true, FOCAL_ALPHA, FOCAL_GAMMA) - focal_loss(p, false, FOCAL_ALPHA, FOCAL_GAMMA)
}

fn l1_rows(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn match_rows(pred: &Matrix, scores: &[f64], gt: &Matrix, per_point: usize) -> Result<Vec<(usize, usize)>> {
    let mut cost = Matrix::zeros(pred.rows(), gt.rows());
    for i in 0..pred.rows() {
        let c = cls_cost(scores[i]);
        for j in 0..gt.rows() {
            let geo = l1_rows(pred.row(i), gt.row(j)) / per_point as f64;
            cost.set(i, j, c + MATCH_GEOMETRY_WEIGHT * geo);
        }
    }
    hungarian_match(&cost)
}

fn traffic_boxes(traffic: &TrafficInput) -> Matrix {
    let rows: Vec<f64> = traffic.detections.iter().flat_map(|d| normalized_box(&d.bbox)).collect();
    Matrix::from_vec(traffic.len(), 4, rows).expect("four columns per box")
}

/// Hungarian matching of one layer's predictions to the ground truth.
pub fn assign(g: &Graph, pred: &Predictions, target: &Target, traffic: &TrafficInput) -> Result<Assignment> {
    let points = match_rows(g.value(pred.points), g.value(pred.point_scores).data(), &target.points, 1)?;
    let k = g.value(pred.lanes).cols() / 3;
    let lanes = match_rows(g.value(pred.lanes), g.value(pred.lane_scores).data(), &target.lanes, k)?;
    let boxes = traffic_boxes(traffic);
    let mut cost = Matrix::zeros(boxes.rows(), target.boxes.rows());
    for (i, det) in traffic.detections.iter().enumerate() {
        for j in 0..target.boxes.rows() {
            let (a, b) = (box_row(&boxes, i), box_row(&target.boxes, j));
            let geo = l1_rows(&a, &b) + giou_loss(&a, &b)?;
            cost.set(i, j, cls_cost(det.score) + MATCH_GEOMETRY_WEIGHT * geo);
        }
    }
    Ok(Assignment { point_matches: points, lane_matches: lanes, traffic_matches: hungarian_match(&cost)? })
}

fn box_row(m: &Matrix, r: usize) -> [f64; 4] {
    let x = m.row(r);
    [x[0], x[1], x[2], x[3]]
}

/// Ground-truth topology in prediction index space; unmatched rows and
/// columns are all negative.
pub fn reindex_topology(
    gt: &BinaryMatrix,
    rows: &[(usize, usize)],
    cols: &[(usize, usize)],
    pred_rows: usize,
    pred_cols: usize,
) -> Matrix {
    let mut out = Matrix::zeros(pred_rows, pred_cols);
    for &(pr, gr) in rows {
        for &(pc, gc) in cols {
            if gt.get(gr, gc) {
                out.set(pr, pc, 1.0);
            }
        }
    }
    out
}

/// Mean focal loss over every cell of a predicted topology matrix.
pub fn topology_loss(
    g: &mut Graph,
    scores: Var,
    gt: &BinaryMatrix,
    rows: &[(usize, usize)],
    cols: &[(usize, usize)],
) -> Result<Var> {
    let [r, c] = g.value(scores).shape();
    let target = reindex_topology(gt, rows, cols, r, c);
    let s = g.focal_sum(scores, &target, FOCAL_ALPHA, FOCAL_GAMMA)?;
    Ok(g.scale(s, 1.0 / (r * c).max(1) as f64))
}

/// Focal classification summed over queries and divided by the number of
/// ground-truth instances, plus the L1 regression over matched pairs.
fn detection_loss(g: &mut Graph, geom: Var, scores: Var, gt: &Matrix, matches: &[(usize, usize)]) -> Result<Var> {
    let n = g.value(scores).rows();
    let mut labels = Matrix::zeros(n, 1);
    for &(p, _) in matches {
        labels.set(p, 0, 1.0);
    }
    let cls = g.focal_sum(scores, &labels, FOCAL_ALPHA, FOCAL_GAMMA)?;
    let cls = g.scale(cls, 1.0 / gt.rows().max(1) as f64);
    if matches.is_empty() {
        return Ok(cls);
    }
    let pi: Vec<usize> = matches.iter().map(|m| m.0).collect();
    let sel = g.gather_rows(geom, &pi)?;
    let mut rows = Matrix::zeros(matches.len(), gt.cols());
    for (r, &(_, gi)) in matches.iter().enumerate() {
        rows.row_mut(r).copy_from_slice(gt.row(gi));
    }
    let gt_v = g.constant(rows);
    let diff = g.sub(sel, gt_v)?;
    let abs = g.abs_sum(diff);
    let reg = g.scale(abs, 1.0 / (matches.len() * gt.cols()) as f64);
    g.add(cls, reg)
}

/// Traffic loss on the stub detections: classification, L1 and GIoU.
pub fn traffic_loss(g: &mut Graph, traffic: &TrafficInput, target: &Target, matches: &[(usize, usize)]) -> Result<Var> {
    let scores = Matrix::from_vec(traffic.len(), 1, traffic.detections.iter().map(|d| d.score).collect())?;
    let boxes = g.constant(traffic_boxes(traffic));
    let scores = g.constant(scores);
    let base = detection_loss(g, boxes, scores, &target.boxes, matches)?;
    if matches.is_empty() {
        return Ok(base);
    }
    let pi: Vec<usize> = matches.iter().map(|m| m.0).collect();
    let gi: Vec<usize> = matches.iter().map(|m| m.1).collect();
    let pb = g.gather_rows(boxes, &pi)?;
    let all_gt = g.constant(target.boxes.clone());
    let gb = g.gather_rows(all_gt, &gi)?;
    let gl = giou_loss_rows(g, pb, gb)?;
    let gl = g.mean(gl);
    g.add(base, gl)
}

fn checked(g: &Graph, v: Var, name: &str) -> Result<f64> {
    let x = g.scalar(v);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss(name.to_string()))
    }
}

/// Weighted loss of one layer and its per-term breakdown.
pub fn layer_loss(
    g: &mut Graph,
    pred: &Predictions,
    target: &Target,
    traffic: &TrafficInput,
    assignment: &Assignment,
    w: &LossWeights,
) -> Result<(Var, LossTerms)> {
    let a = assignment;
    let lt = traffic_loss(g, traffic, target, &a.traffic_matches)?;
    let lp = detection_loss(g, pred.points, pred.point_scores, &target.points, &a.point_matches)?;
    let ll = detection_loss(g, pred.lanes, pred.lane_scores, &target.lanes, &a.lane_matches)?;
    let tpl = topology_loss(g, pred.g_pl, &target.g_pl, &a.point_matches, &a.lane_matches)?;
    let tll = topology_loss(g, pred.g_ll, &target.g_ll, &a.lane_matches, &a.lane_matches)?;
    let tlt = topology_loss(g, pred.g_lt, &target.g_lt, &a.lane_matches, &a.traffic_matches)?;
    let parts = [
        ("t", lt, w.lambda_t),
        ("p", lp, w.lambda_p),
        ("l", ll, w.lambda_l),
        ("pl", tpl, w.lambda_pl),
        ("ll", tll, w.lambda_ll),
        ("lt", tlt, w.lambda_lt),
    ];
    let mut vals = [0.0; 6];
    let mut weighted = Vec::with_capacity(6);
    for (i, (name, v, lambda)) in parts.into_iter().enumerate() {
        checked(g, v, name)?;
        let s = g.scale(v, lambda);
        vals[i] = g.scalar(s);
        weighted.push(s);
    }
    let total = g.add_all(&weighted)?;
    let terms = LossTerms { t: vals[0], p: vals[1], l: vals[2], pl: vals[3], ll: vals[4], lt: vals[5] };
    Ok((total, terms))
}

/// Deep-supervised loss over all layers. When `assignments` is `None` each
/// layer is matched afresh; the matchings used are returned.
pub fn total_loss(
    g: &mut Graph,
    preds: &[Predictions],
    target: &Target,
    traffic: &TrafficInput,
    assignments: Option<&[Assignment]>,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown, Vec<Assignment>)> {
    w.validate()?;
    let used: Vec<Assignment> = match assignments {
        Some(a) if a.len() == preds.len() => a.to_vec(),
        Some(a) => {
            return Err(Error::Shape(format!("{} assignments for {} layers", a.len(), preds.len())));
        }
        None => preds.iter().map(|p| assign(g, p, target, traffic)).collect::<Result<_>>()?,
    };
    let mut layer_vars = Vec::with_capacity(preds.len());
    let mut breakdown = LossBreakdown::default();
    for (pred, a) in preds.iter().zip(&used) {
        let (v, terms) = layer_loss(g, pred, target, traffic, a, w)?;
        breakdown.per_layer.push(g.scalar(v));
        breakdown.terms.accumulate(&terms);
        layer_vars.push(v);
    }
    let total = g.add_all(&layer_vars)?;
    breakdown.total = checked(g, total, "total")?;
    Ok((total, breakdown, used))
}
