//! Hierarchy recovery with latent internal nodes.
//!
//! Distances between current nodes feed a bottom-set criterion; bottom sets
//! found by k-means get a parent (an existing node or a new latent), the
//! distance matrix is contracted onto the parents, and the loop repeats.

mod distance;
mod forest;
mod grouping;
mod kmeans;
mod tree;

pub use distance::{delta_matrix, DistanceMatrix};
pub use forest::{build_forest, build_forest_with, CategoryMap, ROOT_ID};
pub use grouping::{
    assign_latents, contract_distances, promote_zero_length_members, recursive_grouping, Contraction, Group, GroupParent, GroupingConfig,
};
pub use kmeans::{canonical_labels, cluster_bottom_sets, kmeans, row_distances, silhouette, ClusterConfig, KMeansFit};
pub use tree::{HierarchyTree, NodeKind, TreeNode};
