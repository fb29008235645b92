//! Annotation of latent tree nodes through a chat-completion service, and
//! judged hierarchy, divergence and relevance scores.

mod client;
mod prompts;
mod protocol;
mod scores;
mod text;

pub use client::{prompt_key, stub_cluster_reply, ChatClient, ClientConfig, LiveClient, LiveConfig, StubClient};
pub use prompts::{
    divergence_prompt, hierarchy_prompt, relevance_prompt, render_clusters, ClusterData, PromptDomain, PromptTemplate,
    PromptTemplates,
};
pub use protocol::{annotate_tree, parse_cluster_reply, placeholder_annotation, AnnotateConfig, AnnotationReport};
pub use scores::{divergence_score, hierarchy_score, latent_sibling_sets, relevance_score, JudgedScore};
pub use text::{jaccard, tokenize, top_tokens};
