//! Endpoint distance matrices, the exponential decay map and discrete
//! Fréchet distance.

use crate::scene::Point3;
use crate::{Error, Matrix, Result};

/// Lower bound applied to the distance standard deviation in [`fmap`].
pub const SIGMA_FLOOR: f64 = 1e-3;

fn l1(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

fn euclid(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn ends<L: AsRef<[Point3]>>(lane: &L) -> (Point3, Point3) {
    let pts = lane.as_ref();
    (pts[0], pts[pts.len() - 1])
}

/// `d[i][j]` = L1 distance from the end of lane `i` to the start of lane `j`.
///
/// Not symmetric; the diagonal holds each lane's own end-to-start distance.
pub fn lane_lane_distance<L: AsRef<[Point3]>>(lanes: &[L]) -> Matrix {
    let n = lanes.len();
    let e: Vec<_> = lanes.iter().map(ends).collect();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            d.set(i, j, l1(&e[i].1, &e[j].0));
        }
    }
    d
}

/// `d[i][j]` = min of the L1 distances from point `i` to the start and to
/// the end of lane `j`.
pub fn point_lane_distance<L: AsRef<[Point3]>>(points: &[Point3], lanes: &[L]) -> Matrix {
    let e: Vec<_> = lanes.iter().map(ends).collect();
    let mut d = Matrix::zeros(points.len(), lanes.len());
    for (i, p) in points.iter().enumerate() {
        for (j, (s, t)) in e.iter().enumerate() {
            d.set(i, j, l1(p, s).min(l1(p, t)));
        }
    }
    d
}

/// Parameters of `f(d) = exp(-d^alpha / (lambda * sigma_hat))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapParams {
    pub lambda: f64,
    pub alpha: f64,
    /// Fixed distance scale; when `None` it is the population standard
    /// deviation of the matrix being mapped, floored at [`SIGMA_FLOOR`].
    pub sigma_hat: Option<f64>,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            alpha: 2.0,
            sigma_hat: None,
        }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Domain(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let Some(s) = self.sigma_hat {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Domain(format!("sigma_hat must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Population mean and standard deviation of a slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The distance scale used for `values`: their std, floored.
pub fn sigma_hat(values: &[f64]) -> f64 {
    mean_std(values).1.max(SIGMA_FLOOR)
}

/// Partial derivatives of one mapped entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPartials {
    pub value: f64,
    /// With respect to the distance, holding `sigma_hat` fixed.
    pub d_dist: f64,
    pub d_lambda: f64,
    pub d_alpha: f64,
    /// With respect to `sigma_hat`.
    pub d_sigma: f64,
}

/// Evaluates the map and its partials at a single non-negative distance.
///
/// At `d = 0` the derivative in `d` is taken as its one-sided limit, which is
/// 0 for `alpha > 1` and 1 for `alpha = 1`; for `alpha < 1` the limit is
/// unbounded and 0 is reported. The derivative in `alpha` at `d = 0` is 0.
pub fn map_partials(d: f64, lambda: f64, alpha: f64, sigma: f64) -> MapPartials {
    let c = lambda * sigma;
    let u = if d == 0.0 { 0.0 } else { d.powf(alpha) };
    let value = (-u / c).exp();
    let du = if d == 0.0 {
        if alpha == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        alpha * d.powf(alpha - 1.0)
    };
    let ln_d = if d == 0.0 { 0.0 } else { d.ln() };
    MapPartials {
        value,
        d_dist: -value * du / c,
        d_lambda: value * u / (c * lambda),
        d_alpha: -value * u * ln_d / c,
        d_sigma: value * u / (c * sigma),
    }
}

/// Applies the decay map elementwise; the result lies in `(0, 1]`.
pub fn fmap(d: &Matrix, params: &MapParams) -> Result<Matrix> {
    params.validate()?;
    if let Some(v) = d.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("distances must be finite and non-negative, got {v}")));
    }
    let sigma = params.sigma_hat.unwrap_or_else(|| sigma_hat(d.data()));
    Ok(d.map(|v| map_partials(v, params.lambda, params.alpha, sigma).value))
}

/// Discrete Fréchet distance between two polylines under the Euclidean
/// point metric, by the O(n·m) coupling recurrence.
pub fn discrete_frechet(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("discrete Fréchet distance of an empty polyline".into()));
    }
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            let d = euclid(pa, pb);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}
