//! Confusion-matrix metrics, Tukey summaries, the Wilcoxon signed-rank test
//! and opinion-score aggregation.

mod metrics;
mod mos;
mod tukey;
mod wilcoxon;

pub use metrics::{confusion, mean_defined, metrics_from_confusion, ConfusionCounts, SegmentationMetrics, METRIC_NAMES};
pub use mos::{
    mos_aggregate, mos_table_csv, parse_ji_csv, parse_responses_csv, JiPair, MosChoice, MosGroup, MosResponse,
    MosRow, MosTable,
};
pub use tukey::{midpoint_quantile, tukey_summary, TukeySummary};
pub use wilcoxon::{
    exact_p, normal_p, signed_ranks, wilcoxon_two_tailed, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N, MIN_NONZERO,
};
