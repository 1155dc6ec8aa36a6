use serde::{Deserialize, Serialize};

use crate::config::{parse_value, unknown_key, Section};
use crate::nn::Activation;
use crate::{Error, Result};

/// Dimensions and initialisation of the point-lane decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Query feature width.
    pub d: usize,
    pub n_p: usize,
    pub n_l: usize,
    pub n_t: usize,
    /// Points per lane polyline.
    pub k: usize,
    pub layers: usize,
    /// Sampling locations per query in BEV cross-attention.
    pub samples: usize,
    pub heads: usize,
    /// Hidden width of the FFN sublayers.
    pub ffn_hidden: usize,
    /// BEV half-extents and raster cell size (metres).
    pub extent_x: f64,
    pub extent_y: f64,
    pub bev_cell: f64,
    /// Length of the straight lane anchors around each lane reference point.
    pub anchor_len: f64,
    pub gcn_activation: Activation,
    /// One `(lambda, alpha)` pair per distance matrix for all layers, or one
    /// pair per matrix and layer.
    pub share_map_params: bool,
    /// Cut gradients through the geometry and scores handed to the next layer.
    pub detach_state: bool,
    pub lambda_init: f64,
    pub alpha_init: f64,
    pub lambda1_init: f64,
    pub lambda2_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            n_p: 40,
            n_l: 60,
            n_t: 10,
            k: 11,
            layers: 2,
            samples: 4,
            heads: 1,
            ffn_hidden: 64,
            extent_x: 30.0,
            extent_y: 30.0,
            bev_cell: 2.0,
            anchor_len: 10.0,
            gcn_activation: Activation::Sigmoid,
            share_map_params: true,
            detach_state: false,
            lambda_init: 0.2,
            alpha_init: 2.0,
            lambda1_init: 1.0,
            lambda2_init: 1.0,
        }
    }
}

impl ModelConfig {
    /// `(h, w)` of the BEV raster.
    pub fn bev_shape(&self) -> (usize, usize) {
        (
            (2.0 * self.extent_y / self.bev_cell).ceil() as usize,
            (2.0 * self.extent_x / self.bev_cell).ceil() as usize,
        )
    }

    /// Metric `(x, y)` to grid `(u, v)`; a cell centre maps to integers.
    pub fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x + self.extent_x) / self.bev_cell - 0.5,
            (y + self.extent_y) / self.bev_cell - 0.5,
        )
    }

    pub fn activation_name(&self) -> &'static str {
        match self.gcn_activation {
            Activation::Sigmoid => "sigmoid",
            Activation::Silu => "silu",
            Activation::Relu => "relu",
        }
    }
}

impl Section for ModelConfig {
    const PREFIX: &'static str = "model";

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_value(key, value)?,
            "n_p" => self.n_p = parse_value(key, value)?,
            "n_l" => self.n_l = parse_value(key, value)?,
            "n_t" => self.n_t = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "samples" => self.samples = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "ffn_hidden" => self.ffn_hidden = parse_value(key, value)?,
            "extent_x" => self.extent_x = parse_value(key, value)?,
            "extent_y" => self.extent_y = parse_value(key, value)?,
            "bev_cell" => self.bev_cell = parse_value(key, value)?,
            "anchor_len" => self.anchor_len = parse_value(key, value)?,
            "gcn_activation" => {
                self.gcn_activation = match value {
                    "sigmoid" => Activation::Sigmoid,
                    "silu" => Activation::Silu,
                    other => {
                        return Err(Error::Config(format!(
                            "model.gcn_activation must be sigmoid or silu, got `{other}`"
                        )))
                    }
                }
            }
            "share_map_params" => self.share_map_params = parse_value(key, value)?,
            "detach_state" => self.detach_state = parse_value(key, value)?,
            "lambda_init" => self.lambda_init = parse_value(key, value)?,
            "alpha_init" => self.alpha_init = parse_value(key, value)?,
            "lambda1_init" => self.lambda1_init = parse_value(key, value)?,
            "lambda2_init" => self.lambda2_init = parse_value(key, value)?,
            _ => return Err(unknown_key(Self::PREFIX, key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("n_p", self.n_p),
            ("n_l", self.n_l),
            ("layers", self.layers),
            ("samples", self.samples),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.d < 2 {
            return Err(Error::Config("model.d must be at least 2".into()));
        }
        if self.k < 2 {
            return Err(Error::Config("model.k must be at least 2".into()));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.heads = {} does not divide model.d = {}",
                self.heads, self.d
            )));
        }
        for (name, v) in [
            ("extent_x", self.extent_x),
            ("extent_y", self.extent_y),
            ("bev_cell", self.bev_cell),
            ("lambda_init", self.lambda_init),
            ("alpha_init", self.alpha_init),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("model.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("anchor_len", self.anchor_len),
            ("lambda1_init", self.lambda1_init),
            ("lambda2_init", self.lambda2_init),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("model.{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KeyValues;

    #[test]
    fn parses_model_section() {
        let kv = KeyValues::parse("model.d = 8\nmodel.gcn_activation = silu\nmodel.share_map_params = false").unwrap();
        let c = ModelConfig::from_kv(&kv).unwrap();
        assert_eq!(c.d, 8);
        assert_eq!(c.gcn_activation, Activation::Silu);
        assert!(!c.share_map_params);
        let bad = KeyValues::parse("model.heads = 3").unwrap();
        assert!(ModelConfig::from_kv(&bad).is_err());
    }

    #[test]
    fn grid_mapping_hits_cell_centres() {
        let c = ModelConfig::default();
        assert_eq!(c.bev_shape(), (30, 30));
        assert_eq!(c.to_grid(-29.0, -29.0), (0.0, 0.0));
        assert_eq!(c.to_grid(1.0, -27.0), (15.0, 1.0));
    }
}
