//! Target assignment, losses and the optimisation loop.

pub mod fit;
pub mod hungarian;
pub mod loss;
pub mod optim;

pub use fit::{
    batch_gradients, curve_csv, evaluate_loss, fit, fit_model, prepare, scene_gradients, CurveRow, Example, FitResult,
    CURVE_HEADER,
};
pub use hungarian::hungarian_match;
pub use loss::{
    assign, focal_loss, giou, giou_loss, giou_loss_rows, l1_reg_loss, layer_loss, reindex_topology, topology_loss,
    total_loss, traffic_loss, Assignment, LossBreakdown, LossTerms, LossWeights, Target,
};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind, Schedule, TrainConfig};
