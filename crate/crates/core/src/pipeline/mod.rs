//! Stage orchestration over files: one configuration, one root seed, one
//! output directory.

mod commands;
mod config;

pub use commands::{
    cmd_align, cmd_annotate, cmd_embed, cmd_eval, cmd_sppmi, cmd_synth, cmd_tree, exit_code, labeled_pair_auc,
    run_all, run_stage, STAGES,
};
pub use config::{
    AlignStage, AnnotateStage, EmbedStage, EvalStage, Inputs, RunConfig, SppmiStage, SynthStage, TreeStage,
};
