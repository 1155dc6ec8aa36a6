//! Differentiable building blocks expressed on the tape.

use super::graph::{Activation, Graph, Var};
use crate::{Error, Matrix, Result};

/// Block bias `[[0, m_pl], [m_plᵀ, m_ll]]` for merged point and lane queries.
pub fn attention_bias(g: &mut Graph, m_pl: Var, m_ll: Var) -> Result<Var> {
    let (np, nl) = (g.value(m_pl).rows(), g.value(m_pl).cols());
    if g.value(m_ll).shape() != [nl, nl] {
        return Err(Error::Shape(format!(
            "m_ll is {:?}, expected {nl}x{nl}",
            g.value(m_ll).shape()
        )));
    }
    let z = g.constant(Matrix::zeros(np, np));
    let top = g.concat_cols(&[z, m_pl])?;
    let t = g.transpose(m_pl);
    let bottom = g.concat_cols(&[t, m_ll])?;
    g.concat_rows(&[top, bottom])
}

fn check_attention(g: &Graph, q: Var, bias: Var, heads: usize) -> Result<()> {
    let [n, d] = g.value(q).shape();
    if g.value(bias).shape() != [n, n] {
        return Err(Error::Contract(format!(
            "attention bias is {:?} for {n} queries",
            g.value(bias).shape()
        )));
    }
    if d == 0 || heads == 0 || d % heads != 0 {
        return Err(Error::Contract(format!("{heads} heads do not divide d = {d}")));
    }
    Ok(())
}

/// Post-softmax weights `softmax(q·qᵀ/√d + bias)` of one head.
pub fn attention_weights(g: &mut Graph, q: Var, bias: Var) -> Result<Var> {
    check_attention(g, q, bias, 1)?;
    let d = g.value(q).cols() as f64;
    let logits = g.matmul_nt(q, q)?;
    let logits = g.scale(logits, 1.0 / d.sqrt());
    let logits = g.add(logits, bias)?;
    Ok(g.softmax_rows(logits))
}

/// `softmax(q·qᵀ/√d + bias)·q` with queries, keys and values all equal to
/// `q`. With several heads the columns are split evenly, each head attends
/// on its own slice with the shared bias, and the outputs are concatenated.
pub fn biased_self_attention(g: &mut Graph, q: Var, bias: Var, heads: usize) -> Result<Var> {
    check_attention(g, q, bias, heads)?;
    if heads == 1 {
        let w = attention_weights(g, q, bias)?;
        return g.matmul(w, q);
    }
    let dh = g.value(q).cols() / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let w = attention_weights(g, qh, bias)?;
        outs.push(g.matmul(w, qh)?);
    }
    g.concat_cols(&outs)
}

/// `x·w + b` with a 1×out bias row.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// `relu(x·w1 + b1)·w2 + b2`, without the residual.
pub fn ffn(g: &mut Graph, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = linear(g, x, w1, b1)?;
    let h = g.relu(h);
    linear(g, h, w2, b2)
}

/// A BEV feature grid bound on the tape: `(h·w)×C` rows, row-major in `(v, u)`.
#[derive(Clone, Copy, Debug)]
pub struct BevGrid {
    pub features: Var,
    pub h: usize,
    pub w: usize,
}

/// Reference-point cross-attention into a BEV grid.
///
/// `ref_grid` is N×2 in grid coordinates `(u, v)`, `offsets` is N×2S with
/// columns `(du_0, dv_0, du_1, dv_1, ...)` and `logits` is N×S. Row `n` of
/// the result is `Σ_s softmax(logits_n)_s · bilinear(f, ref_n + offset_ns)`.
pub fn bev_cross_attention(
    g: &mut Graph,
    grid: BevGrid,
    ref_grid: Var,
    offsets: Var,
    logits: Var,
) -> Result<Var> {
    if grid.h == 0 || grid.w == 0 {
        return Err(Error::Contract("empty BEV grid".into()));
    }
    let [n, s] = g.value(logits).shape();
    if s == 0 {
        return Err(Error::Contract("at least one sampling location is required".into()));
    }
    if g.value(offsets).shape() != [n, 2 * s] || g.value(ref_grid).shape() != [n, 2] {
        return Err(Error::Shape(format!(
            "bev attention: ref {:?}, offsets {:?}, logits {:?}",
            g.value(ref_grid).shape(),
            g.value(offsets).shape(),
            [n, s]
        )));
    }
    let tiled: Vec<Var> = (0..s).map(|_| ref_grid).collect();
    let base = g.concat_cols(&tiled)?;
    let pos = g.add(base, offsets)?;
    let pos = g.reshape(pos, n * s, 2)?;
    let samples = g.bilinear(grid.features, pos, grid.h, grid.w)?;
    let weights = g.softmax_rows(logits);
    g.group_sum(samples, weights)
}

/// `act(normalize(a)·x·w)` where `normalize` divides each row by its degree.
pub fn gcn_layer(g: &mut Graph, x: Var, a: Var, w: Var, act: Activation) -> Result<Var> {
    if let Some(v) = g.value(a).data().iter().find(|v| **v < 0.0 || v.is_nan()) {
        return Err(Error::Contract(format!("negative adjacency entry {v}")));
    }
    let an = g.row_normalize(a);
    let ax = g.matmul(an, x)?;
    let y = g.matmul(ax, w)?;
    Ok(g.activate(y, act))
}
