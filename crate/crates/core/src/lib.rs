//! Multi-source code embedding harmonization and hierarchy construction.
//!
//! Modules, in pipeline order:
//!
//! - [`synth`]: synthetic trees, coding worlds, event streams and perturbed
//!   correlation matrices.
//! - [`corpus`]: co-occurrence counting, SPPMI matrices and SVD embeddings.
//! - [`align`]: neural optimal-transport alignment of embedding spaces
//!   (block coordinate descent over a transport map and a doubly stochastic
//!   coupling) and harmonization of several sources.
//! - [`hyperembed`]: Lorentz-model hyperbolic embeddings trained with
//!   additivity, information-preserving and contrastive losses.
//! - [`treebuild`]: recursive grouping with k-means bottom-set detection to
//!   recover a hierarchy with latent internal nodes.
//! - [`annotate`]: chat-completion based labelling of latent nodes and judged
//!   tree scores.
//! - [`evalkit`]: AUC, NMI/ARI, sibling precision/sensitivity, Spearman.
//! - [`pipeline`]: file-based stage orchestration driven by one TOML config.

pub mod align;
pub mod annotate;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod hyperembed;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod treebuild;

pub use align::{Coupling, TransportConfig, TransportMap};
pub use annotate::{ChatClient, ClientConfig, StubClient};
pub use corpus::{CodeVocabulary, CooccurrenceMatrix, Domain, EmbeddingMatrix, ParentMap, SppmiMatrix};
pub use error::{Error, Result};
pub use evalkit::{LabeledPairs, MetricsReport, Relation};
pub use hyperembed::{HypTrainConfig, LorentzEmbedding, LorentzPoint, SupervisionSets};
pub use pipeline::RunConfig;
pub use treebuild::{CategoryMap, DistanceMatrix, HierarchyTree, NodeKind};
