//! Synthetic inputs: label-guided perturbation of correlation matrices,
//! random ground-truth trees with exact additive distances, and a complete
//! synthetic coding world for end-to-end runs.

mod labels;
mod perturb;
mod tree;
mod world;

pub use labels::{read_label_pairs, write_label_pairs, PairLabel};
pub use perturb::{perturb_correlation, Perturbation, PerturbationConfig};
pub use tree::{generate_tree, GroundTruthTree};
pub use world::{
    kernel_embedding, random_orthogonal, reference_tree, EventConfig, SourceConfig, SyntheticWorld, WorldConfig,
};
