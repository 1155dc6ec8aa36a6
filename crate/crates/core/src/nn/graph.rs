//! Reverse-mode tape over dense matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse creation order and
//! accumulates gradients into every node that depends on a differentiable
//! leaf. Nodes built purely from constants carry no gradient.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::same_shape;
use crate::geometry::{map_partials, mean_std, SIGMA_FLOOR};
use crate::{Error, Matrix, Result};

/// Degree floor used by [`Graph::row_normalize`].
pub const DEGREE_EPS: f64 = 1e-6;
/// Variance epsilon of [`Graph::layer_norm`].
pub const LN_EPS: f64 = 1e-5;
/// Probability clamp applied inside [`Graph::focal_sum`].
pub const FOCAL_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Silu,
    Relu,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Silu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        xhat: Matrix,
        inv: Vec<f64>,
    },
    FMap {
        d: Var,
        lambda: Var,
        alpha: Var,
        sigma: f64,
        mean: f64,
        sigma_live: bool,
    },
    Bilinear {
        grid: Var,
        pos: Var,
        h: usize,
        w: usize,
    },
    GroupSum {
        samples: Var,
        weights: Var,
    },
    FocalSum {
        p: Var,
        target: Matrix,
        alpha: f64,
        gamma: f64,
    },
    AbsSum(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    RowNormalize(Var),
    Sum(Var),
    Mean(Var),
    PointLaneL1 {
        points: Var,
        lanes: Var,
        use_end: Vec<bool>,
    },
    LaneLaneL1(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing flowed to it.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn bilinear_taps(u: f64, v: f64, h: usize, w: usize) -> ([usize; 4], [f64; 4], [f64; 4], [f64; 4], bool, bool) {
    let uc = u.clamp(0.0, (w - 1) as f64);
    let vc = v.clamp(0.0, (h - 1) as f64);
    let u_live = u == uc && w > 1;
    let v_live = v == vc && h > 1;
    let u0 = (uc.floor() as usize).min(w.saturating_sub(2));
    let v0 = (vc.floor() as usize).min(h.saturating_sub(2));
    let u1 = (u0 + 1).min(w - 1);
    let v1 = (v0 + 1).min(h - 1);
    let fu = if w > 1 { uc - u0 as f64 } else { 0.0 };
    let fv = if h > 1 { vc - v0 as f64 } else { 0.0 };
    let idx = [v0 * w + u0, v0 * w + u1, v1 * w + u0, v1 * w + u1];
    let wt = [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv];
    let du = [-(1.0 - fv), 1.0 - fv, -fv, fv];
    let dv = [-(1.0 - fu), -fu, 1.0 - fu, fu];
    (idx, wt, du, dv, u_live, v_live)
}

fn focal_term(p: f64, t: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let live = p > FOCAL_CLAMP && p < 1.0 - FOCAL_CLAMP;
    let p = p.clamp(FOCAL_CLAMP, 1.0 - FOCAL_CLAMP);
    let (value, slope) = if t > 0.5 {
        let q = 1.0 - p;
        let v = -alpha * q.powf(gamma) * p.ln();
        let s = alpha * (gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p);
        (v, s)
    } else {
        let q = 1.0 - p;
        let v = -(1.0 - alpha) * p.powf(gamma) * q.ln();
        let s = -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * q.ln() - p.powf(gamma) / q);
        (v, s)
    };
    (value, if live { slope } else { 0.0 })
}

/// Focal loss of a single probability against a binary target.
pub fn focal_value(p: f64, target: f64, alpha: f64, gamma: f64) -> f64 {
    focal_term(p, target, alpha, gamma).0
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Binds the named parameter, reusing the same leaf on repeated calls.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let m = store
            .get(name)
            .ok_or_else(|| Error::Mismatch(format!("missing parameter `{name}`")))?
            .clone();
        let v = self.input(m);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Copies a node's value into a fresh constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn unary(&mut self, a: Var, value: Matrix, op: Op) -> Var {
        let g = self.g(a);
        self.push(value, op, g)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let g = self.g(a) || self.g(b);
        self.push(value, op, g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.unary(a, v, Op::Transpose(a))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = Matrix::from_vec(rows, cols, self.value(a).data().to_vec())?;
        Ok(self.unary(a, v, Op::Reshape(a)))
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        same_shape(self.value(a), self.value(b), what)?;
        Ok(self.value(a).zip_map(self.value(b), f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "sub", |x, y| x - y)?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "div", |x, y| x / y)?;
        Ok(self.binary(a, b, v, Op::Div(a, b)))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "min", f64::min)?;
        Ok(self.binary(a, b, v, Op::Min(a, b)))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "max", f64::max)?;
        Ok(self.binary(a, b, v, Op::Max(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.unary(a, v, Op::Scale(a, s))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.unary(a, v, Op::Offset(a))
    }

    /// Adds the 1×C row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::Shape(format!(
                "add_row: {}x{} row for {} columns",
                rv.rows(),
                rv.cols(),
                av.cols()
            )));
        }
        let mut v = av.clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(rv.data()) {
                *x += y;
            }
        }
        Ok(self.binary(a, r, v, Op::AddRow(a, r)))
    }

    /// Multiplies `a` by the 1×1 node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != [1, 1] {
            return Err(Error::Shape("mul_scalar expects a 1x1 factor".into()));
        }
        let k = self.scalar(s);
        let v = self.value(a).scaled(k);
        Ok(self.binary(a, s, v, Op::MulScalar(a, s)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.unary(a, v, Op::Silu(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Silu => self.silu(a),
            Activation::Relu => self.relu(a),
        }
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = super::tensor::softmax_rows(self.value(a));
        self.unary(a, v, Op::SoftmaxRows(a))
    }

    /// Per-row normalisation to zero mean and unit variance followed by the
    /// affine map with 1×d `gain` and `offset`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if d < 2 {
            return Err(Error::Contract(format!("layer_norm needs d >= 2, got {d}")));
        }
        for (name, p) in [("gain", gain), ("offset", offset)] {
            if self.value(p).shape() != [1, d] {
                return Err(Error::Shape(format!("layer_norm {name} must be 1x{d}")));
            }
        }
        let mut xhat = xv.clone();
        let mut inv = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let (mean, std) = mean_std(xv.row(r));
            let k = 1.0 / (std * std + LN_EPS).sqrt();
            for v in xhat.row_mut(r) {
                *v = (*v - mean) * k;
            }
            inv.push(k);
        }
        let (gv, ov) = (self.value(gain), self.value(offset));
        let mut y = xhat.clone();
        for r in 0..y.rows() {
            for ((v, g), o) in y.row_mut(r).iter_mut().zip(gv.data()).zip(ov.data()) {
                *v = *v * g + o;
            }
        }
        let grad = self.g(x) || self.g(gain) || self.g(offset);
        Ok(self.push(y, Op::LayerNorm { x, gain, offset, xhat, inv }, grad))
    }

    /// Elementwise `exp(-d^alpha / (lambda * sigma))` with 1×1 `lambda` and
    /// `alpha`. With `sigma = None` the scale is the population std of `d`,
    /// floored at 1e-3, and is differentiated through.
    pub fn fmap(&mut self, d: Var, lambda: Var, alpha: Var, sigma: Option<f64>) -> Result<Var> {
        for (name, p) in [("lambda", lambda), ("alpha", alpha)] {
            if self.value(p).shape() != [1, 1] {
                return Err(Error::Shape(format!("fmap {name} must be 1x1")));
            }
        }
        let (l, a) = (self.scalar(lambda), self.scalar(alpha));
        if !(l > 0.0 && a > 0.0) {
            return Err(Error::Domain(format!("fmap needs lambda, alpha > 0, got {l}, {a}")));
        }
        let dv = self.value(d);
        if let Some(bad) = dv.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("fmap distance {bad}")));
        }
        let (mean, std) = mean_std(dv.data());
        let (s, live) = match sigma {
            Some(s) => (s, false),
            None => (std.max(SIGMA_FLOOR), std > SIGMA_FLOOR),
        };
        let v = dv.map(|x| map_partials(x, l, a, s).value);
        let grad = self.g(d) || self.g(lambda) || self.g(alpha);
        Ok(self.push(
            v,
            Op::FMap { d, lambda, alpha, sigma: s, mean, sigma_live: live },
            grad,
        ))
    }

    /// Bilinear lookup into an `h×w` grid stored as `(h·w)×C` rows, at P
    /// positions given as a P×2 matrix of `(u, v)` grid coordinates where
    /// `u` indexes columns and `v` rows. Positions are clamped to the grid.
    pub fn bilinear(&mut self, grid: Var, pos: Var, h: usize, w: usize) -> Result<Var> {
        let gv = self.value(grid);
        if h == 0 || w == 0 || gv.rows() != h * w {
            return Err(Error::Contract(format!(
                "bilinear grid {h}x{w} with {} rows",
                gv.rows()
            )));
        }
        let pv = self.value(pos);
        if pv.cols() != 2 {
            return Err(Error::Shape("bilinear positions must be Px2".into()));
        }
        let c = gv.cols();
        let mut out = Matrix::zeros(pv.rows(), c);
        for p in 0..pv.rows() {
            let (idx, wt, ..) = bilinear_taps(pv.get(p, 0), pv.get(p, 1), h, w);
            let row = out.row_mut(p);
            for (i, k) in idx.iter().zip(wt) {
                if k == 0.0 {
                    continue;
                }
                for (o, f) in row.iter_mut().zip(gv.row(*i)) {
                    *o += k * f;
                }
            }
        }
        Ok(self.binary(grid, pos, out, Op::Bilinear { grid, pos, h, w }))
    }

    /// Row `n` of the result is `Σ_s weights[n][s] · samples[n·S + s]`.
    pub fn group_sum(&mut self, samples: Var, weights: Var) -> Result<Var> {
        let (sv, wv) = (self.value(samples), self.value(weights));
        let (n, s) = (wv.rows(), wv.cols());
        if sv.rows() != n * s {
            return Err(Error::Shape(format!(
                "group_sum: {} samples for {n}x{s} weights",
                sv.rows()
            )));
        }
        let mut out = Matrix::zeros(n, sv.cols());
        for i in 0..n {
            for k in 0..s {
                let wk = wv.get(i, k);
                let src = sv.row(i * s + k).to_vec();
                for (o, x) in out.row_mut(i).iter_mut().zip(src) {
                    *o += wk * x;
                }
            }
        }
        Ok(self.binary(samples, weights, out, Op::GroupSum { samples, weights }))
    }

    /// Sum of the binary focal loss of probabilities `p` against `target`.
    pub fn focal_sum(&mut self, p: Var, target: &Matrix, alpha: f64, gamma: f64) -> Result<Var> {
        same_shape(self.value(p), target, "focal_sum")?;
        let total: f64 = self
            .value(p)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| focal_term(x, t, alpha, gamma).0)
            .sum();
        let v = Matrix::filled(1, 1, total);
        Ok(self.unary(p, v, Op::FocalSum { p, target: target.clone(), alpha, gamma }))
    }

    /// Sum of absolute values.
    pub fn abs_sum(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).data().iter().map(|x| x.abs()).sum());
        self.unary(a, v, Op::AbsSum(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| self.value(*p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(Error::Shape(format!("concat_rows: {} vs {cols} columns", v.cols())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let grad = parts.iter().any(|p| self.g(*p));
        let v = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), grad))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        if let Some(p) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(Error::Shape(format!(
                "concat_cols: {} vs {rows} rows",
                self.value(*p).rows()
            )));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let grad = parts.iter().any(|p| self.g(*p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), grad))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {}", av.rows())));
        }
        let c = av.cols();
        let v = Matrix::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.unary(a, v, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {}", av.cols())));
        }
        let mut v = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            v.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        Ok(self.unary(a, v, Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(i) = idx.iter().find(|i| **i >= av.rows()) {
            return Err(Error::Shape(format!("gather_rows index {i} of {}", av.rows())));
        }
        let mut v = Matrix::zeros(idx.len(), av.cols());
        for (o, &i) in idx.iter().enumerate() {
            v.row_mut(o).copy_from_slice(av.row(i));
        }
        Ok(self.unary(a, v, Op::GatherRows(a, idx.to_vec())))
    }

    /// `a / max(rowsum(a), 1e-6)` row by row.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let v = super::tensor::row_normalize(self.value(a));
        self.unary(a, v, Op::RowNormalize(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let v = Matrix::filled(1, 1, self.value(a).sum() / n);
        self.unary(a, v, Op::Mean(a))
    }

    /// `d[i][j]` = min of the L1 distances from point `i` (row of an N×3
    /// matrix) to the first and last point of lane `j` (row of an M×3k
    /// matrix of flattened polylines).
    pub fn point_lane_l1(&mut self, points: Var, lanes: Var) -> Result<Var> {
        let (pv, lv) = (self.value(points), self.value(lanes));
        if pv.cols() != 3 || lv.cols() < 6 || lv.cols() % 3 != 0 {
            return Err(Error::Shape(format!(
                "point_lane_l1: points {:?}, lanes {:?}",
                pv.shape(),
                lv.shape()
            )));
        }
        let last = lv.cols() - 3;
        let mut out = Matrix::zeros(pv.rows(), lv.rows());
        let mut use_end = Vec::with_capacity(pv.rows() * lv.rows());
        for i in 0..pv.rows() {
            let p = pv.row(i);
            for j in 0..lv.rows() {
                let l = lv.row(j);
                let ds = l1_3(p, &l[..3]);
                let de = l1_3(p, &l[last..]);
                out.set(i, j, ds.min(de));
                use_end.push(de < ds);
            }
        }
        Ok(self.binary(points, lanes, out, Op::PointLaneL1 { points, lanes, use_end }))
    }

    /// `d[i][j]` = L1 distance from the last point of lane `i` to the first
    /// point of lane `j`, lanes as rows of flattened polylines.
    pub fn lane_lane_l1(&mut self, lanes: Var) -> Result<Var> {
        let lv = self.value(lanes);
        if lv.cols() < 6 || lv.cols() % 3 != 0 {
            return Err(Error::Shape(format!("lane_lane_l1: lanes {:?}", lv.shape())));
        }
        let last = lv.cols() - 3;
        let n = lv.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, l1_3(&lv.row(i)[last..], &lv.row(j)[..3]));
            }
        }
        Ok(self.unary(lanes, out, Op::LaneLaneL1(lanes)))
    }

    /// Sum of 1×1 nodes; an empty list gives a zero constant.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = terms.split_first() else {
            return Ok(self.constant(Matrix::zeros(1, 1)));
        };
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse pass seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = self.value(root);
        grads[root.0] = Some(Matrix::filled(rv.rows(), rv.cols(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, m: Matrix) {
        if !self.g(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&m),
            slot => *slot = Some(m),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.g(*a) {
                    self.acc(grads, *a, g.matmul_nt(self.value(*b))?);
                }
                if self.g(*b) {
                    self.acc(grads, *b, self.value(*a).matmul_tn(g)?);
                }
            }
            Op::MatMulNT(a, b) => {
                if self.g(*a) {
                    self.acc(grads, *a, g.matmul(self.value(*b))?);
                }
                if self.g(*b) {
                    self.acc(grads, *b, g.matmul_tn(self.value(*a))?);
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let s = self.value(*a).shape();
                self.acc(grads, *a, Matrix::from_vec(s[0], s[1], g.data().to_vec())?);
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.scaled(-1.0));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, g.zip_map(bv, |x, y| x / y));
                let mut gb = g.zip_map(av, |x, y| x * y);
                gb = gb.zip_map(bv, |x, y| -x / (y * y));
                self.acc(grads, *b, gb);
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let take_a = matches!(node.op, Op::Min(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let mask = av.zip_map(bv, |x, y| {
                    let a_wins = if take_a { x <= y } else { x >= y };
                    if a_wins {
                        1.0
                    } else {
                        0.0
                    }
                });
                self.acc(grads, *a, g.zip_map(&mask, |x, m| x * m));
                self.acc(grads, *b, g.zip_map(&mask, |x, m| x * (1.0 - m)));
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.scaled(*s)),
            Op::Offset(a) => self.acc(grads, *a, g.clone()),
            Op::AddRow(a, r) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *r, g.col_sums());
            }
            Op::MulScalar(a, s) => {
                let k = self.scalar(*s);
                self.acc(grads, *a, g.scaled(k));
                let gs: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                self.acc(grads, *s, Matrix::filled(1, 1, gs));
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                self.acc(grads, *a, ga);
            }
            Op::Sigmoid(a) => self.acc(grads, *a, g.zip_map(y, |x, s| x * s * (1.0 - s))),
            Op::Silu(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| {
                    let s = sigmoid(v);
                    x * (s + v * s * (1.0 - s))
                });
                self.acc(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LayerNorm { x, gain, offset, xhat, inv } => {
                self.acc(grads, *offset, g.col_sums());
                self.acc(grads, *gain, g.zip_map(xhat, |a, b| a * b).col_sums());
                if self.g(*x) {
                    let gv = self.value(*gain);
                    let d = xhat.cols() as f64;
                    let mut gx = Matrix::zeros(xhat.rows(), xhat.cols());
                    for r in 0..xhat.rows() {
                        let dxh: Vec<f64> = g.row(r).iter().zip(gv.data()).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, dv), xv) in gx.row_mut(r).iter_mut().zip(&dxh).zip(xhat.row(r)) {
                            *o = inv[r] / d * (d * dv - s1 - xv * s2);
                        }
                    }
                    self.acc(grads, *x, gx);
                }
            }
            Op::FMap { d, lambda, alpha, sigma, mean, sigma_live } => {
                let dv = self.value(*d);
                let (l, a) = (self.scalar(*lambda), self.scalar(*alpha));
                let (mut gl, mut ga, mut gs) = (0.0, 0.0, 0.0);
                let mut gd = Matrix::zeros(dv.rows(), dv.cols());
                for (k, (&x, &gk)) in dv.data().iter().zip(g.data()).enumerate() {
                    let p = map_partials(x, l, a, *sigma);
                    gl += gk * p.d_lambda;
                    ga += gk * p.d_alpha;
                    gs += gk * p.d_sigma;
                    gd.raw_mut()[k] = gk * p.d_dist;
                }
                self.acc(grads, *lambda, Matrix::filled(1, 1, gl));
                self.acc(grads, *alpha, Matrix::filled(1, 1, ga));
                if self.g(*d) {
                    if *sigma_live {
                        let n = dv.len() as f64;
                        for (o, &x) in gd.raw_mut().iter_mut().zip(dv.data()) {
                            *o += gs * (x - mean) / (n * sigma);
                        }
                    }
                    self.acc(grads, *d, gd);
                }
            }
            Op::Bilinear { grid, pos, h, w } => {
                let (gv, pv) = (self.value(*grid), self.value(*pos));
                let mut ggrid = Matrix::zeros(gv.rows(), gv.cols());
                let mut gpos = Matrix::zeros(pv.rows(), 2);
                for p in 0..pv.rows() {
                    let (idx, wt, du, dv, u_live, v_live) = bilinear_taps(pv.get(p, 0), pv.get(p, 1), *h, *w);
                    let gr = g.row(p);
                    let (mut su, mut sv) = (0.0, 0.0);
                    for t in 0..4 {
                        let frow = gv.row(idx[t]);
                        let dot: f64 = frow.iter().zip(gr).map(|(a, b)| a * b).sum();
                        su += du[t] * dot;
                        sv += dv[t] * dot;
                        if wt[t] != 0.0 {
                            for (o, x) in ggrid.row_mut(idx[t]).iter_mut().zip(gr) {
                                *o += wt[t] * x;
                            }
                        }
                    }
                    gpos.set(p, 0, if u_live { su } else { 0.0 });
                    gpos.set(p, 1, if v_live { sv } else { 0.0 });
                }
                self.acc(grads, *grid, ggrid);
                self.acc(grads, *pos, gpos);
            }
            Op::GroupSum { samples, weights } => {
                let (sv, wv) = (self.value(*samples), self.value(*weights));
                let s = wv.cols();
                let mut gsmp = Matrix::zeros(sv.rows(), sv.cols());
                let mut gw = Matrix::zeros(wv.rows(), s);
                for n in 0..wv.rows() {
                    for k in 0..s {
                        let r = n * s + k;
                        let wk = wv.get(n, k);
                        for (o, x) in gsmp.row_mut(r).iter_mut().zip(g.row(n)) {
                            *o = wk * x;
                        }
                        gw.set(n, k, sv.row(r).iter().zip(g.row(n)).map(|(a, b)| a * b).sum());
                    }
                }
                self.acc(grads, *samples, gsmp);
                self.acc(grads, *weights, gw);
            }
            Op::FocalSum { p, target, alpha, gamma } => {
                let k = g.get(0, 0);
                let gp = self
                    .value(*p)
                    .zip_map(target, |x, t| k * focal_term(x, t, *alpha, *gamma).1);
                self.acc(grads, *p, gp);
            }
            Op::AbsSum(a) => {
                let k = g.get(0, 0);
                let ga = self.value(*a).map(|x| k * sign(x));
                self.acc(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut r0 = 0;
                for p in parts {
                    let n = self.value(*p).rows();
                    let part = Matrix::from_vec(n, c, g.data()[r0 * c..(r0 + n) * c].to_vec())?;
                    self.acc(grads, *p, part);
                    r0 += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let n = self.value(*p).cols();
                    let mut part = Matrix::zeros(g.rows(), n);
                    for r in 0..g.rows() {
                        part.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + n]);
                    }
                    self.acc(grads, *p, part);
                    c0 += n;
                }
            }
            Op::SliceRows(a, start) => {
                let s = self.value(*a).shape();
                let mut ga = Matrix::zeros(s[0], s[1]);
                let c = s[1];
                ga.raw_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                self.acc(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let s = self.value(*a).shape();
                let mut ga = Matrix::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    ga.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.acc(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let s = self.value(*a).shape();
                let mut ga = Matrix::zeros(s[0], s[1]);
                for (o, &i) in idx.iter().enumerate() {
                    for (x, y) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                        *x += y;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::RowNormalize(a) => {
                let av = self.value(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let s: f64 = av.row(r).iter().sum();
                    let gr = g.row(r);
                    if s > DEGREE_EPS {
                        let dot: f64 = gr.iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for (o, gv) in ga.row_mut(r).iter_mut().zip(gr) {
                            *o = (gv - dot) / s;
                        }
                    } else {
                        for (o, gv) in ga.row_mut(r).iter_mut().zip(gr) {
                            *o = gv / DEGREE_EPS;
                        }
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Sum(a) => {
                let s = self.value(*a).shape();
                self.acc(grads, *a, Matrix::filled(s[0], s[1], g.get(0, 0)));
            }
            Op::PointLaneL1 { points, lanes, use_end } => {
                let (pv, lv) = (self.value(*points), self.value(*lanes));
                let last = lv.cols() - 3;
                let mut gp = Matrix::zeros(pv.rows(), 3);
                let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                for i in 0..pv.rows() {
                    for j in 0..lv.rows() {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        let c0 = if use_end[i * lv.rows() + j] { last } else { 0 };
                        for c in 0..3 {
                            let sg = sign(pv.get(i, c) - lv.get(j, c0 + c)) * gij;
                            gp.row_mut(i)[c] += sg;
                            gl.row_mut(j)[c0 + c] -= sg;
                        }
                    }
                }
                self.acc(grads, *points, gp);
                self.acc(grads, *lanes, gl);
            }
            Op::LaneLaneL1(lanes) => {
                let lv = self.value(*lanes);
                let last = lv.cols() - 3;
                let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                for i in 0..lv.rows() {
                    for j in 0..lv.rows() {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        for c in 0..3 {
                            let sg = sign(lv.get(i, last + c) - lv.get(j, c)) * gij;
                            gl.row_mut(i)[last + c] += sg;
                            gl.row_mut(j)[c] -= sg;
                        }
                    }
                }
                self.acc(grads, *lanes, gl);
            }
            Op::Mean(a) => {
                let s = self.value(*a).shape();
                let n = (s[0] * s[1]).max(1) as f64;
                self.acc(grads, *a, Matrix::filled(s[0], s[1], g.get(0, 0) / n));
            }
        }
        Ok(())
    }

    /// Gradients of every bound parameter, zero-filled where none flowed.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Matrix> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v, self.value(*v))))
            .collect()
    }
}

fn l1_3(a: &[f64], b: &[f64]) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
