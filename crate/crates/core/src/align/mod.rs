//! Neural optimal-transport alignment of embedding spaces and multi-source
//! harmonization.

mod checkpoint;
mod harmonize;
mod hungarian;
mod network;
mod ot;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use harmonize::{aggregate, align_pair, harmonize, split_blocks, AlignedSource, Harmonized};
pub use hungarian::hungarian;
pub use network::{Gradients, Layer, Optimizer, OptimizerKind, TransportMap};
pub use ot::{
    barycentric, mean_alignment_error, nearest_neighbor_accuracy, ot_objective, train_ot, transport_cost,
    update_coupling, update_mapping, Coupling, CouplingStep, Objective, OtResult, TraceRecord, TransportConfig,
    MARGINAL_TOL,
};
