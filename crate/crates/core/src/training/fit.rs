//! The optimisation loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossBreakdown, LossTerms, Target};
use super::optim::{clip_global_norm, Optimizer, TrainConfig};
use crate::decoder::{Model, ModelConfig, SceneInput, TrafficNoise};
use crate::nn::Graph;
use crate::scene::Scene;
use crate::{Error, Matrix, Result};

/// A scene prepared for training: decoder input plus ground truth.
#[derive(Clone, Debug)]
pub struct Example {
    pub input: SceneInput,
    pub target: Target,
}

pub fn prepare(scenes: &[Scene], cfg: &ModelConfig, noise: &TrafficNoise) -> Result<Vec<Example>> {
    scenes
        .iter()
        .map(|s| {
            Ok(Example {
                input: SceneInput::from_scene(s, cfg, noise, s.seed)?,
                target: Target::from_scene(s, cfg)?,
            })
        })
        .collect()
}

/// Loss and parameter gradients for one scene.
pub fn scene_gradients(model: &Model, ex: &Example, weights: &super::LossWeights) -> Result<(LossBreakdown, BTreeMap<String, Matrix>)> {
    let mut g = Graph::new();
    let preds = model.forward(&mut g, &ex.input)?;
    let (total, breakdown, _) = total_loss(&mut g, &preds, &ex.target, &ex.input.traffic, None, weights)?;
    let grads = g.backward(total)?;
    let pg = g.param_grads(&grads);
    if let Some((name, _)) = pg.iter().find(|(_, m)| !m.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    Ok((breakdown, pg))
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let mut out = LossBreakdown::default();
    let layers = parts.first().map_or(0, |p| p.per_layer.len());
    out.per_layer = vec![0.0; layers];
    let mut terms = [0.0; 6];
    for p in parts {
        out.total += p.total;
        for (t, v) in terms.iter_mut().zip(p.terms.values()) {
            *t += v;
        }
        for (a, b) in out.per_layer.iter_mut().zip(&p.per_layer) {
            *a += b;
        }
    }
    out.total /= n;
    out.per_layer.iter_mut().for_each(|v| *v /= n);
    let [t, p, l, pl, ll, lt] = terms.map(|v| v / n);
    out.terms = LossTerms { t, p, l, pl, ll, lt };
    out
}

/// Batch-mean loss and gradient. Scenes are processed in parallel and
/// reduced in batch order, so the result does not depend on thread count.
pub fn batch_gradients(
    model: &Model,
    batch: &[&Example],
    weights: &super::LossWeights,
) -> Result<(LossBreakdown, BTreeMap<String, Matrix>)> {
    let results: Vec<Result<(LossBreakdown, BTreeMap<String, Matrix>)>> =
        batch.par_iter().map(|ex| scene_gradients(model, ex, weights)).collect();
    let mut breakdowns = Vec::with_capacity(batch.len());
    let mut sum: BTreeMap<String, Matrix> = BTreeMap::new();
    for r in results {
        let (b, grads) = r?;
        breakdowns.push(b);
        for (name, gm) in grads {
            match sum.get_mut(&name) {
                Some(acc) => acc.add_assign(&gm),
                None => {
                    sum.insert(name, gm);
                }
            }
        }
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    for m in sum.values_mut() {
        *m = m.scaled(scale);
    }
    Ok((mean_breakdown(&breakdowns), sum))
}

/// Mean loss over `examples` without updating anything.
pub fn evaluate_loss(model: &Model, examples: &[Example], weights: &super::LossWeights) -> Result<LossBreakdown> {
    let parts: Vec<Result<LossBreakdown>> = examples
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new();
            let preds = model.forward(&mut g, &ex.input)?;
            Ok(total_loss(&mut g, &preds, &ex.target, &ex.input.traffic, None, weights)?.1)
        })
        .collect();
    Ok(mean_breakdown(&parts.into_iter().collect::<Result<Vec<_>>>()?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// The last parameters whose loss and gradients were finite.
    pub model: Model,
    pub curve: Vec<CurveRow>,
    /// Why training stopped early, if it did.
    pub stopped: Option<String>,
}

/// Initialises a model from `cfg.seed` and trains it on `scenes`.
pub fn fit(scenes: &[Scene], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<FitResult> {
    let examples = prepare(scenes, model_cfg, &TrafficNoise::default())?;
    fit_model(Model::init(model_cfg, cfg.seed)?, &examples, cfg)
}

/// Trains `model` in place of its current parameters. Each curve row holds
/// the batch loss before that iteration's update.
pub fn fit_model(mut model: Model, examples: &[Example], cfg: &TrainConfig) -> Result<FitResult> {
    use crate::config::Section;
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training needs at least one scene".into()));
    }
    let n = examples.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut opt = Optimizer::new();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let picked: Vec<&Example> = if batch == n {
            examples.iter().collect()
        } else {
            let mut v = Vec::with_capacity(batch);
            while v.len() < batch {
                if cursor == n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                v.push(&examples[order[cursor]]);
                cursor += 1;
            }
            v
        };
        let (loss, mut grads) = match batch_gradients(&model, &picked, &cfg.weights) {
            Ok(r) => r,
            Err(e @ (Error::NonFiniteLoss(_) | Error::NonFinite(_) | Error::Divergence { .. })) => {
                log::error!("iteration {it}: {e}; keeping the last finite parameters");
                return Ok(FitResult { model, curve, stopped: Some(format!("iteration {it}: {e}")) });
            }
            Err(e) => return Err(e),
        };
        let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
        let lr = cfg.schedule.rate(cfg.lr, it, cfg.iterations);
        log::debug!("iteration {it}: loss {:.6} lr {lr:.3e} |g| {grad_norm:.3e}", loss.total);
        curve.push(CurveRow { iteration: it, lr, grad_norm, loss });
        let mut next = model.params.clone();
        opt.step(cfg, lr, &mut next, &grads)?;
        Model::project(&mut next);
        if !next.is_finite() {
            log::error!("iteration {it}: update produced non-finite parameters");
            return Ok(FitResult { model, curve, stopped: Some(format!("iteration {it}: non-finite parameters")) });
        }
        model.params = next;
    }
    Ok(FitResult { model, curve, stopped: None })
}

pub const CURVE_HEADER: &str = "iteration,lr,grad_norm,total,t,p,l,pl,ll,lt";

/// Loss curve as CSV with [`CURVE_HEADER`] columns.
pub fn curve_csv(curve: &[CurveRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in curve {
        let _ = write!(s, "{},{},{},{}", r.iteration, r.lr, r.grad_norm, r.loss.total);
        for v in r.loss.terms.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}
