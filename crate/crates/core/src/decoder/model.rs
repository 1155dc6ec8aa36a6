use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bev::{rasterize, BevRaster, BEV_CHANNELS};
use super::traffic::{traffic_stub, TrafficInput, TrafficNoise, TRAFFIC_FEATURES};
use super::ModelConfig;
use crate::nn::kernels::{attention_bias, bev_cross_attention, biased_self_attention, ffn, gcn_layer, linear, BevGrid};
use crate::nn::{Graph, ParamStore, Var};
use crate::scene::{DetectionSet, Lane, Point3, Scene};
use crate::{Error, Matrix, Result};

/// Parameter handles bound on one graph, keyed by module path.
pub type Bound = BTreeMap<String, Var>;

fn get(b: &Bound, name: &str) -> Result<Var> {
    b.get(name)
        .copied()
        .ok_or_else(|| Error::Mismatch(format!("missing parameter `{name}`")))
}

/// Per-scene decoder input: the BEV raster and the stubbed traffic slots.
#[derive(Clone, Debug)]
pub struct SceneInput {
    pub bev: BevRaster,
    pub traffic: TrafficInput,
}

impl SceneInput {
    pub fn from_scene(scene: &Scene, cfg: &ModelConfig, noise: &TrafficNoise, seed: u64) -> Result<Self> {
        Ok(Self {
            bev: rasterize(&scene.lanes, cfg),
            traffic: traffic_stub(scene, cfg.n_t, noise, seed)?,
        })
    }
}

/// Initial query features and reference geometry.
#[derive(Clone, Copy, Debug)]
pub struct QueryBank {
    pub q_p: Var,
    pub q_l: Var,
    pub q_t: Var,
    pub ref_p: Var,
    pub ref_l: Var,
}

/// Geometry and topology scores carried from one layer to the next.
#[derive(Clone, Copy, Debug)]
pub struct LayerState {
    /// `n_p × 3`.
    pub points: Var,
    /// `n_l × 3k`, each row a flattened polyline.
    pub lanes: Var,
    pub g_pl: Var,
    pub g_lt: Var,
}

impl LayerState {
    /// Constant state built from plain matrices.
    pub fn constant(g: &mut Graph, points: Matrix, lanes: Matrix, g_pl: Matrix, g_lt: Matrix) -> Self {
        Self { points: g.constant(points), lanes: g.constant(lanes), g_pl: g.constant(g_pl), g_lt: g.constant(g_lt) }
    }
}

/// One layer's predictions; lanes are `n_l × 3k` rows of flattened points.
#[derive(Clone, Copy, Debug)]
pub struct Predictions {
    pub points: Var,
    pub point_scores: Var,
    pub lanes: Var,
    pub lane_scores: Var,
    pub g_pl: Var,
    pub g_ll: Var,
    pub g_lt: Var,
}

pub fn rows_to_lanes(m: &Matrix) -> Vec<Vec<Point3>> {
    (0..m.rows())
        .map(|r| m.row(r).chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
        .collect()
}

fn rows_to_points(m: &Matrix) -> Vec<Point3> {
    (0..m.rows()).map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)]).collect()
}

fn map_prefix(cfg: &ModelConfig, layer: usize) -> String {
    if cfg.share_map_params {
        "map".to_string()
    } else {
        format!("layer{layer}.map")
    }
}

fn mlp(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, x, get(b, &format!("{prefix}.w1"))?, get(b, &format!("{prefix}.b1"))?)?;
    let h = g.relu(h);
    linear(g, h, get(b, &format!("{prefix}.w2"))?, get(b, &format!("{prefix}.b2"))?)
}

fn norm(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gain = get(b, &format!("{prefix}.gain"))?;
    let offset = get(b, &format!("{prefix}.offset"))?;
    g.layer_norm(x, gain, offset)
}

/// The decoder's `f_map` affinities `(M_pl, M_ll)` from the carried geometry.
pub fn affinities(g: &mut Graph, b: &Bound, cfg: &ModelConfig, layer: usize, state: &LayerState) -> Result<(Var, Var)> {
    let d_pl = g.point_lane_l1(state.points, state.lanes)?;
    let d_ll = g.lane_lane_l1(state.lanes)?;
    let mp = map_prefix(cfg, layer);
    let m_pl = g.fmap(d_pl, get(b, &format!("{mp}.pl.lambda"))?, get(b, &format!("{mp}.pl.alpha"))?, None)?;
    let m_ll = g.fmap(d_ll, get(b, &format!("{mp}.ll.lambda"))?, get(b, &format!("{mp}.ll.alpha"))?, None)?;
    Ok((m_pl, m_ll))
}

/// Merged point-lane self-attention with the geometric bias, followed by a
/// residual and per-type layer norm. `zero_bias` replaces the bias with 0.
#[allow(clippy::too_many_arguments)]
pub fn plmsa(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    layer: usize,
    q_p: Var,
    q_l: Var,
    m_pl: Var,
    m_ll: Var,
    zero_bias: bool,
) -> Result<(Var, Var)> {
    let (np, nl) = (g.value(q_p).rows(), g.value(q_l).rows());
    if g.value(m_pl).shape() != [np, nl] {
        return Err(Error::Contract(format!("m_pl is {:?}, expected {np}x{nl}", g.value(m_pl).shape())));
    }
    let x = g.concat_rows(&[q_p, q_l])?;
    let bias = if zero_bias {
        g.constant(Matrix::zeros(np + nl, np + nl))
    } else {
        attention_bias(g, m_pl, m_ll)?
    };
    let a = biased_self_attention(g, x, bias, cfg.heads)?;
    let x = g.add(x, a)?;
    let xp = g.slice_rows(x, 0, np)?;
    let xl = g.slice_rows(x, np, nl)?;
    let pre = format!("layer{layer}.plmsa");
    Ok((norm(g, b, &format!("{pre}.ln_p"), xp)?, norm(g, b, &format!("{pre}.ln_l"), xl)?))
}

/// Metric `n×3` (or wider) positions to `n×2` grid coordinates.
fn grid_coords(g: &mut Graph, cfg: &ModelConfig, xyz: Var, col: usize) -> Result<Var> {
    let xy = g.slice_cols(xyz, col, 2)?;
    let s = g.scale(xy, 1.0 / cfg.bev_cell);
    let shift = g.constant(Matrix::from_vec(
        1,
        2,
        vec![cfg.extent_x / cfg.bev_cell - 0.5, cfg.extent_y / cfg.bev_cell - 0.5],
    )?);
    g.add_row(s, shift)
}

fn bev_block(g: &mut Graph, b: &Bound, prefix: &str, grid: BevGrid, q: Var, ref_grid: Var) -> Result<Var> {
    let off = linear(g, q, get(b, &format!("{prefix}.off.w"))?, get(b, &format!("{prefix}.off.b"))?)?;
    let att = linear(g, q, get(b, &format!("{prefix}.att.w"))?, get(b, &format!("{prefix}.att.b"))?)?;
    let s = bev_cross_attention(g, grid, ref_grid, off, att)?;
    let x = g.add(q, s)?;
    norm(g, b, &format!("{prefix}.ln"), x)
}

fn ffn_block(g: &mut Graph, b: &Bound, prefix: &str, q: Var) -> Result<Var> {
    let p = |n: &str| get(b, &format!("{prefix}.{n}"));
    let y = ffn(g, q, p("w1")?, p("b1")?, p("w2")?, p("b2")?)?;
    let x = g.add(q, y)?;
    norm(g, b, &format!("{prefix}.ln"), x)
}

/// Point-lane, lane-lane and lane-traffic graph convolutions.
///
/// `g_pl` and `g_lt` are the previous layer's topology scores.
#[allow(clippy::too_many_arguments)]
pub fn unified_scene_graph(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    layer: usize,
    q_p: Var,
    q_l: Var,
    q_t: Var,
    m_pl: Var,
    m_ll: Var,
    g_pl: Var,
    g_lt: Var,
) -> Result<(Var, Var)> {
    let pre = format!("layer{layer}.usg");
    let w = |n: &str| get(b, &format!("{pre}.{n}"));
    let (l1, l2) = (w("lambda1")?, w("lambda2")?);
    if !(g.scalar(l1).is_finite() && g.scalar(l2).is_finite()) {
        return Err(Error::Divergence { layer, what: "lambda1/lambda2 non-finite".into() });
    }
    let act = cfg.gcn_activation;
    let a = g.mul_scalar(g_pl, l1)?;
    let bm = g.mul_scalar(m_pl, l2)?;
    let a_pl = g.add(a, bm)?;
    let a_lp = g.transpose(a_pl);

    let plgcn = |g: &mut Graph, qp: Var, ql: Var, tag: &str| -> Result<(Var, Var)> {
        let wpl = get(b, &format!("{pre}.{tag}_pl.w"))?;
        let wlp = get(b, &format!("{pre}.{tag}_lp.w"))?;
        let up = gcn_layer(g, ql, a_pl, wpl, act)?;
        let ul = gcn_layer(g, qp, a_lp, wlp, act)?;
        Ok((g.add(up, qp)?, g.add(ul, ql)?))
    };
    let (p1, l1q) = plgcn(g, q_p, q_l, "gcn1")?;

    let nl = g.value(q_l).rows();
    let eye = g.constant(Matrix::identity(nl));
    let mt = g.transpose(m_ll);
    let s = g.add(eye, m_ll)?;
    let m_bar = g.add(s, mt)?;
    let ll = gcn_layer(g, l1q, m_bar, w("gcn_ll.w")?, act)?;
    let ll = g.add(ll, l1q)?;
    let lt = gcn_layer(g, q_t, g_lt, w("gcn_lt.w")?, act)?;
    let lt = g.add(lt, l1q)?;
    let cat = g.concat_cols(&[ll, lt])?;
    let l2q = linear(g, cat, w("down.w")?, w("down.b")?)?;

    plgcn(g, p1, l2q, "gcn2")
}

/// Regression and classification heads. Returns
/// `(points, point_scores, lanes, lane_scores)`.
pub fn point_lane_heads(
    g: &mut Graph,
    b: &Bound,
    layer: usize,
    q_p: Var,
    q_l: Var,
    ref_points: Var,
    anchors: Var,
) -> Result<(Var, Var, Var, Var)> {
    let pre = format!("layer{layer}.head");
    let dp = mlp(g, b, &format!("{pre}.point.reg"), q_p)?;
    let points = g.add(dp, ref_points)?;
    let cp = mlp(g, b, &format!("{pre}.point.cls"), q_p)?;
    let point_scores = g.sigmoid(cp);
    let dl = mlp(g, b, &format!("{pre}.lane.reg"), q_l)?;
    let lanes = g.add(dl, anchors)?;
    let cl = mlp(g, b, &format!("{pre}.lane.cls"), q_l)?;
    let lane_scores = g.sigmoid(cl);
    Ok((points, point_scores, lanes, lane_scores))
}

/// `sigmoid(MLP_a(X)·MLP_b(Y)ᵀ)` for the three topology matrices.
pub fn topology_head(g: &mut Graph, b: &Bound, layer: usize, q_p: Var, q_l: Var, q_t: Var) -> Result<(Var, Var, Var)> {
    let pre = format!("layer{layer}.head.topo");
    let mut pair = |x: Var, y: Var, tag: &str| -> Result<Var> {
        let ea = mlp(g, b, &format!("{pre}.{tag}.a"), x)?;
        let eb = mlp(g, b, &format!("{pre}.{tag}.b"), y)?;
        let logits = g.matmul_nt(ea, eb)?;
        Ok(g.sigmoid(logits))
    };
    Ok((pair(q_p, q_l, "pl")?, pair(q_l, q_l, "ll")?, pair(q_l, q_t, "lt")?))
}

/// Straight anchors of length `len` along +x centred on each reference point.
pub fn lane_anchors(g: &mut Graph, ref_l: Var, k: usize, len: f64) -> Result<Var> {
    let tiled: Vec<Var> = (0..k).map(|_| ref_l).collect();
    let t = g.concat_cols(&tiled)?;
    let mut row = vec![0.0; 3 * k];
    for i in 0..k {
        row[3 * i] = len * (i as f64 / (k - 1) as f64 - 0.5);
    }
    let shift = g.constant(Matrix::from_vec(1, 3 * k, row)?);
    g.add_row(t, shift)
}

fn check_finite(g: &Graph, layer: usize, vars: &[(&str, Var)]) -> Result<()> {
    for (what, v) in vars {
        if !g.value(*v).is_finite() {
            return Err(Error::Divergence { layer, what: format!("non-finite {what}") });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Replace the PLMSA geometric bias with zeros.
    pub zero_bias: bool,
    /// Replace every graph adjacency input (`A_pl`, `M̄_ll`, `G_lt`) with zeros.
    pub zero_adjacency: bool,
}

/// Runs all decoder layers and returns each layer's predictions.
pub fn decoder_forward(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    input: &SceneInput,
    opts: ForwardOptions,
) -> Result<Vec<Predictions>> {
    if cfg.layers == 0 {
        return Err(Error::Config("at least one decoder layer is required".into()));
    }
    if input.traffic.raw.rows() != cfg.n_t {
        return Err(Error::Shape(format!(
            "{} traffic slots for model.n_t = {}",
            input.traffic.raw.rows(),
            cfg.n_t
        )));
    }
    let raw = g.constant(input.bev.cells.clone());
    let feats = linear(g, raw, get(b, "bev.w")?, get(b, "bev.b")?)?;
    let grid = BevGrid { features: feats, h: input.bev.h, w: input.bev.w };
    let traw = g.constant(input.traffic.raw.clone());
    let bank = QueryBank {
        q_p: get(b, "query.p")?,
        q_l: get(b, "query.l")?,
        q_t: linear(g, traw, get(b, "traffic.w")?, get(b, "traffic.b")?)?,
        ref_p: get(b, "ref.p")?,
        ref_l: get(b, "ref.l")?,
    };

    let anchors = lane_anchors(g, bank.ref_l, cfg.k, cfg.anchor_len)?;
    let mut state = LayerState {
        points: bank.ref_p,
        lanes: anchors,
        g_pl: g.constant(Matrix::zeros(cfg.n_p, cfg.n_l)),
        g_lt: g.constant(Matrix::zeros(cfg.n_l, cfg.n_t)),
    };
    let (mut q_p, mut q_l) = (bank.q_p, bank.q_l);
    let mid = (cfg.k - 1) / 2;
    let mut out = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let (m_pl, m_ll) = affinities(g, b, cfg, layer, &state)?;
        let (p, l) = plmsa(g, b, cfg, layer, q_p, q_l, m_pl, m_ll, opts.zero_bias)?;

        let rp = grid_coords(g, cfg, state.points, 0)?;
        let rl = grid_coords(g, cfg, state.lanes, 3 * mid)?;
        let p = bev_block(g, b, &format!("layer{layer}.bev_p"), grid, p, rp)?;
        let l = bev_block(g, b, &format!("layer{layer}.bev_l"), grid, l, rl)?;
        let p = ffn_block(g, b, &format!("layer{layer}.ffn_p"), p)?;
        let l = ffn_block(g, b, &format!("layer{layer}.ffn_l"), l)?;

        let (gpl, glt, mpl, mll) = if opts.zero_adjacency {
            let z = |g: &mut Graph, r, c| g.constant(Matrix::zeros(r, c));
            (
                z(g, cfg.n_p, cfg.n_l),
                z(g, cfg.n_l, cfg.n_t),
                z(g, cfg.n_p, cfg.n_l),
                // M̄ = I + M + Mᵀ, so M = -I/2 zeros it.
                g.constant(Matrix::identity(cfg.n_l).scaled(-0.5)),
            )
        } else {
            (state.g_pl, state.g_lt, m_pl, m_ll)
        };
        let (p, l) = unified_scene_graph(g, b, cfg, layer, p, l, bank.q_t, mpl, mll, gpl, glt)?;
        let (points, point_scores, lanes, lane_scores) = point_lane_heads(g, b, layer, p, l, state.points, state.lanes)?;
        let (tpl, tll, tlt) = topology_head(g, b, layer, p, l, bank.q_t)?;
        let pred = Predictions { points, point_scores, lanes, lane_scores, g_pl: tpl, g_ll: tll, g_lt: tlt };
        check_finite(
            g,
            layer,
            &[
                ("point queries", p),
                ("lane queries", l),
                ("points", points),
                ("lanes", lanes),
                ("point scores", point_scores),
                ("lane scores", lane_scores),
                ("g_pl", tpl),
                ("g_ll", tll),
                ("g_lt", tlt),
            ],
        )?;
        out.push(pred);

        state = LayerState { points, lanes, g_pl: tpl, g_lt: tlt };
        if cfg.detach_state {
            state = LayerState {
                points: g.detach(points),
                lanes: g.detach(lanes),
                g_pl: g.detach(tpl),
                g_lt: g.detach(tlt),
            };
        }
        q_p = p;
        q_l = l;
    }
    Ok(out)
}

/// Reads one layer's predictions off the graph. Only the first
/// `traffic.len()` traffic columns are kept.
pub fn to_detections(g: &Graph, pred: &Predictions, traffic: &TrafficInput) -> Result<DetectionSet> {
    let nt = traffic.len();
    let glt_full = g.value(pred.g_lt);
    let mut g_lt = Matrix::zeros(glt_full.rows(), nt);
    for r in 0..glt_full.rows() {
        g_lt.row_mut(r).copy_from_slice(&glt_full.row(r)[..nt]);
    }
    let lanes = rows_to_lanes(g.value(pred.lanes))
        .into_iter()
        .map(Lane::new)
        .collect::<Result<Vec<_>>>()?;
    let d = DetectionSet {
        points: rows_to_points(g.value(pred.points)),
        point_scores: g.value(pred.point_scores).data().to_vec(),
        lanes,
        lane_scores: g.value(pred.lane_scores).data().to_vec(),
        traffic: traffic.detections.clone(),
        g_pl: g.value(pred.g_pl).clone(),
        g_ll: g.value(pred.g_ll).clone(),
        g_lt,
    };
    d.validate()?;
    Ok(d)
}

/// Shapes of every parameter for `cfg`, keyed by module path.
pub fn parameter_shapes(cfg: &ModelConfig) -> BTreeMap<String, [usize; 2]> {
    let (d, s, k) = (cfg.d, cfg.samples, cfg.k);
    let mut m = BTreeMap::new();
    let mut put = |name: String, r: usize, c: usize| {
        m.insert(name, [r, c]);
    };
    put("query.p".into(), cfg.n_p, d);
    put("query.l".into(), cfg.n_l, d);
    put("ref.p".into(), cfg.n_p, 3);
    put("ref.l".into(), cfg.n_l, 3);
    put("bev.w".into(), BEV_CHANNELS, d);
    put("bev.b".into(), 1, d);
    put("traffic.w".into(), TRAFFIC_FEATURES, d);
    put("traffic.b".into(), 1, d);
    let map_sets: Vec<String> = if cfg.share_map_params {
        vec!["map".into()]
    } else {
        (0..cfg.layers).map(|l| format!("layer{l}.map")).collect()
    };
    for mp in map_sets {
        for which in ["pl", "ll"] {
            put(format!("{mp}.{which}.lambda"), 1, 1);
            put(format!("{mp}.{which}.alpha"), 1, 1);
        }
    }
    for l in 0..cfg.layers {
        let p = format!("layer{l}");
        let mut mlp = |name: String, i: usize, h: usize, o: usize| {
            put(format!("{name}.w1"), i, h);
            put(format!("{name}.b1"), 1, h);
            put(format!("{name}.w2"), h, o);
            put(format!("{name}.b2"), 1, o);
        };
        mlp(format!("{p}.ffn_p"), d, cfg.ffn_hidden, d);
        mlp(format!("{p}.ffn_l"), d, cfg.ffn_hidden, d);
        mlp(format!("{p}.head.point.reg"), d, d, 3);
        mlp(format!("{p}.head.point.cls"), d, d, 1);
        mlp(format!("{p}.head.lane.reg"), d, d, 3 * k);
        mlp(format!("{p}.head.lane.cls"), d, d, 1);
        for t in ["pl", "ll", "lt"] {
            for side in ["a", "b"] {
                mlp(format!("{p}.head.topo.{t}.{side}"), d, d, d);
            }
        }
        let mut ln = |name: String| {
            put(format!("{name}.gain"), 1, d);
            put(format!("{name}.offset"), 1, d);
        };
        ln(format!("{p}.plmsa.ln_p"));
        ln(format!("{p}.plmsa.ln_l"));
        ln(format!("{p}.bev_p.ln"));
        ln(format!("{p}.bev_l.ln"));
        ln(format!("{p}.ffn_p.ln"));
        ln(format!("{p}.ffn_l.ln"));
        for q in ["bev_p", "bev_l"] {
            put(format!("{p}.{q}.off.w"), d, 2 * s);
            put(format!("{p}.{q}.off.b"), 1, 2 * s);
            put(format!("{p}.{q}.att.w"), d, s);
            put(format!("{p}.{q}.att.b"), 1, s);
        }
        put(format!("{p}.usg.lambda1"), 1, 1);
        put(format!("{p}.usg.lambda2"), 1, 1);
        for gname in ["gcn1_pl", "gcn1_lp", "gcn_ll", "gcn_lt", "gcn2_pl", "gcn2_lp"] {
            put(format!("{p}.usg.{gname}.w"), d, d);
        }
        put(format!("{p}.usg.down.w"), 2 * d, d);
        put(format!("{p}.usg.down.b"), 1, d);
    }
    m
}

/// Prior probability behind the initial classification bias.
const CLS_PRIOR: f64 = 0.1;

fn init_param(name: &str, r: usize, c: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Matrix {
    let leaf = name.rsplit('.').next().unwrap_or("");
    let uniform = |rng: &mut ChaCha8Rng, b: f64| -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-b..=b)).collect()).expect("shape")
    };
    let xavier = |rng: &mut ChaCha8Rng| uniform(rng, (6.0 / (r + c) as f64).sqrt());
    match leaf {
        "gain" => Matrix::filled(r, c, 1.0),
        "offset" => Matrix::zeros(r, c),
        "lambda" => Matrix::filled(1, 1, cfg.lambda_init),
        "alpha" => Matrix::filled(1, 1, cfg.alpha_init),
        "lambda1" => Matrix::filled(1, 1, cfg.lambda1_init),
        "lambda2" => Matrix::filled(1, 1, cfg.lambda2_init),
        _ if name == "ref.p" || name == "ref.l" => {
            let mut m = Matrix::zeros(r, c);
            let margin = if name == "ref.l" { cfg.anchor_len / 2.0 } else { 0.0 };
            let ex = (cfg.extent_x - margin).max(0.0);
            for i in 0..r {
                m.set(i, 0, rng.random_range(-ex..=ex));
                m.set(i, 1, rng.random_range(-cfg.extent_y..=cfg.extent_y));
            }
            m
        }
        "b2" if name.contains(".cls") => Matrix::filled(r, c, -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln()),
        "w2" if name.contains(".reg") || name.contains(".topo") => xavier(rng).scaled(0.1),
        "w" if name.contains(".off") => xavier(rng).scaled(0.1),
        _ if leaf.starts_with('b') => Matrix::zeros(r, c),
        _ if name.starts_with("query.") => uniform(rng, 1.0),
        _ => xavier(rng),
    }
}

/// Decoder weights together with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    model: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Seeded initialisation; parameters are drawn in name order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        use crate::config::Section;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, [r, c]) in parameter_shapes(cfg) {
            let m = init_param(&name, r, c, cfg, &mut rng);
            params.insert(name, m);
        }
        Ok(Self { cfg: cfg.clone(), params })
    }

    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        self.params.names().map(|n| Ok((n.clone(), g.param(&self.params, n)?))).collect()
    }

    pub fn forward(&self, g: &mut Graph, input: &SceneInput) -> Result<Vec<Predictions>> {
        let b = self.bind(g)?;
        decoder_forward(g, &b, &self.cfg, input, ForwardOptions::default())
    }

    /// Detections of every layer for one scene.
    pub fn predict(&self, input: &SceneInput) -> Result<Vec<DetectionSet>> {
        let mut g = Graph::new();
        let preds = self.forward(&mut g, input)?;
        preds.iter().map(|p| to_detections(&g, p, &input.traffic)).collect()
    }

    /// Keeps the learnable map parameters inside their valid ranges.
    pub fn project(params: &mut ParamStore) {
        for (name, m) in params.iter_mut() {
            if name.ends_with(".lambda") {
                let v = m.get(0, 0).max(1e-4);
                m.set(0, 0, v);
            } else if name.ends_with(".alpha") {
                let v = m.get(0, 0).clamp(0.1, 8.0);
                m.set(0, 0, v);
            } else if name.ends_with(".lambda1") || name.ends_with(".lambda2") {
                let v = m.get(0, 0).max(0.0);
                m.set(0, 0, v);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CheckpointDoc { version: CHECKPOINT_VERSION, model: self.cfg.clone(), params: self.params.clone() };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Parses a checkpoint and checks its parameters against its config.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", doc.version)));
        }
        let shapes = parameter_shapes(&doc.model);
        for (name, shape) in &shapes {
            match doc.params.get(name) {
                None => return Err(Error::Mismatch(format!("checkpoint lacks `{name}`"))),
                Some(m) if m.shape() != *shape => {
                    return Err(Error::Mismatch(format!(
                        "`{name}` is {:?} in the checkpoint, config implies {shape:?}",
                        m.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = doc.params.names().find(|n| !shapes.contains_key(*n)) {
            return Err(Error::Mismatch(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self { cfg: doc.model, params: doc.params })
    }
}
