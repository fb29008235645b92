//! Hyperbolic embeddings in the Lorentz model, trained with an additivity
//! loss over parent-child triples, an information-preserving loss toward the
//! initial inner products, and a sampled InfoNCE loss over positive pairs.

mod lorentz;
mod losses;
mod train;

pub use lorentz::{
    lift, lorentz_distance, lorentz_distance_rows, lorentz_inner, lorentz_inner_rows, project_tangent, reproject,
    LorentzEmbedding, LorentzPoint, RESIDUAL_TOL,
};
pub use losses::{
    additivity_loss, additivity_loss_grad, contrastive_loss, contrastive_loss_grad, info_loss, info_loss_grad,
    info_loss_grad_sampled, init_targets, sample_negatives, Triple,
};
pub use train::{train_hyperbolic, write_training_log, EpochLoss, HypTrainConfig, HypTrainOutput, SupervisionSets};
