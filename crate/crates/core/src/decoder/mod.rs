//! Point-lane decoder: merged self-attention with a geometric bias, BEV
//! sampling, the scene graph network and the prediction heads.

pub mod bev;
mod config;
pub mod model;
pub mod traffic;

pub use bev::{rasterize, BevRaster, BEV_CHANNELS};
pub use config::ModelConfig;
pub use model::{
    affinities, decoder_forward, lane_anchors, parameter_shapes, plmsa, point_lane_heads, rows_to_lanes,
    to_detections, topology_head, unified_scene_graph, Bound, ForwardOptions, LayerState, Model, Predictions,
    QueryBank, SceneInput,
};
pub use traffic::{traffic_stub, TrafficInput, TrafficNoise, TRAFFIC_FEATURES};
