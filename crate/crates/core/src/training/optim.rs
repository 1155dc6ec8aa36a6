//! First-order optimisers, learning-rate schedules and the `train` config
//! section.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use crate::config::{parse_value, unknown_key, Section};
use crate::nn::ParamStore;
use crate::{Error, Matrix, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Momentum,
    Adam,
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over the run.
    Cosine,
}

impl Schedule {
    pub fn rate(&self, base: f64, iteration: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let t = if total <= 1 { 0.0 } else { iteration as f64 / (total - 1) as f64 };
                0.5 * base * (1.0 + (PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub schedule: Schedule,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Scenes per step; 0 means the whole dataset.
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            optimizer: OptimizerKind::Gd,
            lr: 1e-2,
            schedule: Schedule::Constant,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 0.0,
            batch_size: 0,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// AdamW with cosine decay from 2e-4 and weight decay 0.01.
    pub fn paper_preset() -> Self {
        Self {
            optimizer: OptimizerKind::AdamW,
            lr: 2e-4,
            schedule: Schedule::Cosine,
            weight_decay: 0.01,
            ..Self::default()
        }
    }

    /// Adam at 5e-3 with cosine decay, gradient clipping at 10 and
    /// `lambda_ll = 50`, sized for desk runs.
    pub fn smoke_preset() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 5e-3,
            schedule: Schedule::Cosine,
            grad_clip: 10.0,
            weights: LossWeights { lambda_ll: 50.0, ..LossWeights::default() },
            ..Self::default()
        }
    }

    fn apply_preset(&mut self, name: &str) -> Result<()> {
        let keep = (self.iterations, self.batch_size, self.seed, self.weights);
        *self = match name {
            "default" | "gd" => Self::default(),
            "paper" => Self::paper_preset(),
            "smoke" => Self::smoke_preset(),
            other => return Err(Error::Config(format!("unknown train.preset `{other}`"))),
        };
        (self.iterations, self.batch_size, self.seed, self.weights) = keep;
        Ok(())
    }
}

impl Section for TrainConfig {
    const PREFIX: &'static str = "train";

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => self.apply_preset(value)?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "gd" => OptimizerKind::Gd,
                    "momentum" => OptimizerKind::Momentum,
                    "adam" => OptimizerKind::Adam,
                    "adamw" => OptimizerKind::AdamW,
                    other => return Err(Error::Config(format!("unknown train.optimizer `{other}`"))),
                }
            }
            "schedule" => {
                self.schedule = match value {
                    "constant" => Schedule::Constant,
                    "cosine" => Schedule::Cosine,
                    other => return Err(Error::Config(format!("unknown train.schedule `{other}`"))),
                }
            }
            "lr" => self.lr = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "eps" => self.eps = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "lambda_t" => self.weights.lambda_t = parse_value(key, value)?,
            "lambda_p" => self.weights.lambda_p = parse_value(key, value)?,
            "lambda_l" => self.weights.lambda_l = parse_value(key, value)?,
            "lambda_pl" => self.weights.lambda_pl = parse_value(key, value)?,
            "lambda_ll" => self.weights.lambda_ll = parse_value(key, value)?,
            "lambda_lt" => self.weights.lambda_lt = parse_value(key, value)?,
            _ => return Err(unknown_key(Self::PREFIX, key)),
        }
        Ok(())
    }

    /// `train.preset` is applied first; the other keys override it.
    fn from_kv(kv: &crate::config::KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = kv.get("train.preset") {
            cfg.apply_preset(p)?;
        }
        for (k, v) in kv.section(Self::PREFIX).filter(|(k, _)| *k != "preset") {
            cfg.set_key(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.grad_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training hyperparameters: {self:?}")))
        }
    }
}

/// Per-parameter optimiser state.
#[derive(Clone, Debug, Default)]
pub struct Optimizer {
    step: u64,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl Optimizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update with learning rate `lr`. Parameters without a
    /// gradient entry are left untouched.
    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        lr: f64,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Matrix>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        for (name, p) in params.iter_mut() {
            let Some(gm) = grads.get(name) else { continue };
            if gm.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient for `{name}` is {:?}, parameter {:?}", gm.shape(), p.shape())));
            }
            match cfg.optimizer {
                OptimizerKind::Gd => {
                    for (x, g) in p.data_mut().iter_mut().zip(gm.data()) {
                        *x -= lr * g;
                    }
                }
                OptimizerKind::Momentum => {
                    let v = self.first.entry(name.clone()).or_insert_with(|| Matrix::zeros(gm.rows(), gm.cols()));
                    for ((x, g), m) in p.data_mut().iter_mut().zip(gm.data()).zip(v.data_mut()) {
                        *m = cfg.momentum * *m + g;
                        *x -= lr * *m;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let decoupled = cfg.optimizer == OptimizerKind::AdamW;
                    let m1 = self.first.entry(name.clone()).or_insert_with(|| Matrix::zeros(gm.rows(), gm.cols()));
                    let m2 = self.second.entry(name.clone()).or_insert_with(|| Matrix::zeros(gm.rows(), gm.cols()));
                    let c1 = 1.0 - cfg.beta1.powi(t);
                    let c2 = 1.0 - cfg.beta2.powi(t);
                    let data = p.data_mut();
                    let (m1d, m2d) = (m1.data_mut(), m2.data_mut());
                    for i in 0..data.len() {
                        let mut g = gm.data()[i];
                        if !decoupled {
                            g += cfg.weight_decay * data[i];
                        }
                        m1d[i] = cfg.beta1 * m1d[i] + (1.0 - cfg.beta1) * g;
                        m2d[i] = cfg.beta2 * m2d[i] + (1.0 - cfg.beta2) * g * g;
                        let update = (m1d[i] / c1) / ((m2d[i] / c2).sqrt() + cfg.eps);
                        if decoupled {
                            data[i] -= lr * cfg.weight_decay * data[i];
                        }
                        data[i] -= lr * update;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Matrix>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|m| m.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for m in grads.values_mut() {
            for x in m.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KeyValues;

    fn quad_grad(p: &ParamStore) -> BTreeMap<String, Matrix> {
        // Gradient of 0.5·|x - 3|².
        p.iter().map(|(n, m)| (n.clone(), m.map(|x| x - 3.0))).collect()
    }

    #[test]
    fn every_optimizer_descends_a_quadratic() {
        for kind in [OptimizerKind::Gd, OptimizerKind::Momentum, OptimizerKind::Adam, OptimizerKind::AdamW] {
            let cfg = TrainConfig { optimizer: kind, lr: 0.05, ..TrainConfig::default() };
            let mut p = ParamStore::new();
            p.insert("x", Matrix::zeros(1, 2));
            let mut opt = Optimizer::new();
            for _ in 0..400 {
                let g = quad_grad(&p);
                opt.step(&cfg, cfg.lr, &mut p, &g).unwrap();
            }
            let x = p.get("x").unwrap().get(0, 0);
            assert!((x - 3.0).abs() < 0.05, "{kind:?} ended at {x}");
        }
    }

    #[test]
    fn zero_rate_leaves_params() {
        let cfg = TrainConfig { optimizer: OptimizerKind::AdamW, weight_decay: 0.1, ..TrainConfig::default() };
        let mut p = ParamStore::new();
        p.insert("x", Matrix::filled(1, 1, 2.0));
        let g = quad_grad(&p);
        Optimizer::new().step(&cfg, 0.0, &mut p, &g).unwrap();
        assert_eq!(p.get("x").unwrap().get(0, 0), 2.0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(Schedule::Cosine.rate(1.0, 0, 11), 1.0);
        assert!(Schedule::Cosine.rate(1.0, 10, 11).abs() < 1e-15);
        assert!((Schedule::Cosine.rate(1.0, 5, 11) - 0.5).abs() < 1e-12);
        assert_eq!(Schedule::Constant.rate(0.3, 7, 11), 0.3);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].get(0, 0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn presets_and_overrides() {
        let kv = KeyValues::parse("train.preset = paper\ntrain.iterations = 7\ntrain.lr = 0.001").unwrap();
        let c = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(c.optimizer, OptimizerKind::AdamW);
        assert_eq!(c.schedule, Schedule::Cosine);
        assert_eq!((c.iterations, c.lr), (7, 0.001));
        assert_eq!(TrainConfig::paper_preset().lr, 2e-4);
        assert!(TrainConfig::from_kv(&KeyValues::parse("train.optimizer = sgdx").unwrap()).is_err());
        assert!(TrainConfig::from_kv(&KeyValues::parse("train.lambda_ll = -1").unwrap()).is_err());
    }
}
