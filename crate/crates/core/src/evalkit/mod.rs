//! Evaluation: pair-ranking AUC, partition agreement, sibling-pair
//! precision and sensitivity, feature ranking and rank correlation.

mod metrics;
mod pairs;
mod report;
mod tree_metrics;

pub use metrics::{
    ari, auc, average_ranks, nmi, pair_auc, sample_negative_pairs, select_features, spearman, PartitionPair,
};
pub use pairs::{LabeledPair, LabeledPairs, Relation, Split};
pub use report::MetricsReport;
pub use tree_metrics::{partition_from_tree, sibling_precision_sensitivity, PartitionMode};
