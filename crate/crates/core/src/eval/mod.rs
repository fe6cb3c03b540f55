//! Accuracy, discriminator confusion, proxy A-distance and rank-based significance tests.

mod metrics;
mod pad;
mod stats;

pub use metrics::{
    accuracy, accuracy_of_predictions, argmax_rows, confusion_curve, Classify, ConfusionPoint,
    MetricsRecord,
};
pub use pad::{probe_error, proxy_a_distance, proxy_a_distance_from_error, ProbeConfig};
pub use stats::{
    friedman_ranks, is_significant, nemenyi_cd, nemenyi_q, significance_report, PairVerdict,
    RankTable, SignificanceReport,
};
