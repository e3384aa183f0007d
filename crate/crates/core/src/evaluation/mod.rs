//! Per-class and overall metrics, subject-wise split plans and the
//! cross-validation driver.

mod cv;
mod metrics;
mod render;
mod split;

pub use cv::{default_factory, run_cross_validation, CvConfig, CvReport, FoldMean, FoldReport};
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport, ORIENTATION, REPORT_SCHEMA_VERSION};
pub use render::{render_confusion, render_summary};
pub use split::{build_protocol_plan, build_split_plan, Fold, Protocol, SplitPlan};
