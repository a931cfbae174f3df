//! AUC and related metrics, run reports, cross-run comparison and curves.
//!
//! Every scored event is one (t → t+1) transition of a test sequence: the
//! model's probability for the next answer paired with that answer. Events are
//! pooled across students by default.

pub mod curve;
pub mod metrics;
pub mod report;
pub mod scored;

pub use curve::{emit_curve, Curve};
pub use metrics::{
    accuracy, adjusted_rand_index, auc, average_ranks, mean_group_auc, mean_std, pearson, rmse, spearman,
};
pub use report::{compare_runs, published_auc, Comparison, ComparisonRow, EvalReport, PUBLISHED_AUC};
pub use scored::{AucMode, ScoredEvents};
