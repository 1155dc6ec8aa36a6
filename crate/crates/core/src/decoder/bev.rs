//! Ground-truth BEV raster standing in for an image-to-BEV encoder.

use super::ModelConfig;
use crate::scene::{Lane, Point3};
use crate::Matrix;

/// Raw channels per cell: lane proximity, lane direction cos and sin,
/// endpoint proximity, normalised x, normalised y, constant.
pub const BEV_CHANNELS: usize = 7;

/// `h×w` raster stored as `(h·w)×BEV_CHANNELS`, row-major in `(v, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BevRaster {
    pub h: usize,
    pub w: usize,
    pub cells: Matrix,
}

fn seg_dist(p: [f64; 2], a: &Point3, b: &Point3) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt()
}

/// Rasterises lanes onto the model's BEV grid.
pub fn rasterize(lanes: &[Lane], cfg: &ModelConfig) -> BevRaster {
    let (h, w) = cfg.bev_shape();
    let mut cells = Matrix::zeros(h * w, BEV_CHANNELS);
    let width = cfg.bev_cell;
    for v in 0..h {
        for u in 0..w {
            let x = -cfg.extent_x + (u as f64 + 0.5) * cfg.bev_cell;
            let y = -cfg.extent_y + (v as f64 + 0.5) * cfg.bev_cell;
            let mut best = f64::INFINITY;
            let mut dir = (0.0, 0.0);
            let mut end_best = f64::INFINITY;
            for lane in lanes {
                let pts = lane.points();
                for s in pts.windows(2) {
                    let d = seg_dist([x, y], &s[0], &s[1]);
                    if d < best {
                        best = d;
                        let (dx, dy) = (s[1][0] - s[0][0], s[1][1] - s[0][1]);
                        let n = (dx * dx + dy * dy).sqrt().max(1e-12);
                        dir = (dx / n, dy / n);
                    }
                }
                for e in [lane.start(), lane.end()] {
                    end_best = end_best.min(((x - e[0]).powi(2) + (y - e[1]).powi(2)).sqrt());
                }
            }
            let prox = (-(best * best) / (2.0 * width * width)).exp();
            let row = cells.row_mut(v * w + u);
            row[0] = prox;
            row[1] = prox * dir.0;
            row[2] = prox * dir.1;
            row[3] = (-(end_best * end_best) / (2.0 * width * width)).exp();
            row[4] = x / cfg.extent_x;
            row[5] = y / cfg.extent_y;
            row[6] = 1.0;
        }
    }
    BevRaster { h, w, cells }
}
