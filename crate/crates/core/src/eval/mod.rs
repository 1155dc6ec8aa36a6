//! Detection and topology metrics with endpoint-gap diagnostics.
//!
//! Detection metrics are mean AP over greedy score-ordered matchings:
//! points by Euclidean distance and lanes by discrete Fréchet distance at
//! 1, 2 and 3 m, traffic boxes per category at IoU 0.5. Topology uses the
//! edge-AP variant in [`topology`]. All scores are on a 0–100 scale.

pub mod ap;
pub mod det;
pub mod gaps;
pub mod report;
pub mod topology;

pub use ap::{average_precision, pr_curve, Ranked};
pub use det::{det_l, det_p, det_t, greedy_match, iou, DET_THRESHOLDS, IOU_THRESHOLD};
pub use gaps::{endpoint_gap_report, map_clusters, GapReport};
pub use report::{
    evaluate, evaluate_scene, ols, pooled_report, report_csv, summary_table, Evaluation, MetricReport, SceneEval,
    ThresholdAp, REPORT_CSV_HEADER,
};
pub use topology::{top_score, topology_slots, TOP_LANE_THRESHOLD};
