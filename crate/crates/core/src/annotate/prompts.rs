//! Prompt templates for latent-node annotation and for the judged metrics.

use serde::{Deserialize, Serialize};

use crate::corpus::Domain;

const CLUSTER_FORMAT: &str = "Each cluster contains codes paired with descriptions in the format: 'code:description'. Some clusters lack descriptions.";
const CLUSTER_TAIL: &str = "give a summary phrase (few words) for each cluster. These cluster summary phrases should serve as classifications for the clusters, each distinctly different from the others. Please respond with 'cluster:description' for each cluster, separated by \\n, with no other words or characters.";

/// Vocabulary family a prompt is written for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptDomain {
    Diagnosis,
    Medication,
    Lab,
    Generic,
}

impl From<Domain> for PromptDomain {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Diagnosis => PromptDomain::Diagnosis,
            Domain::Medication => PromptDomain::Medication,
            Domain::Lab => PromptDomain::Lab,
            Domain::Other => PromptDomain::Generic,
        }
    }
}

/// Annotation prompt with a `{data}` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub domain: PromptDomain,
    pub text: String,
}

impl PromptTemplate {
    /// The built-in prompt for `domain`. The generic prompt is the
    /// laboratory one, which names no coding system.
    pub fn builtin(domain: PromptDomain) -> Self {
        let knowledge = match domain {
            PromptDomain::Diagnosis => "Use your knowledge of Phecodes and language comprehension skills to",
            PromptDomain::Medication => "Use your knowledge of RxNorm codes and language comprehension skills to",
            PromptDomain::Lab | PromptDomain::Generic => "Use your language comprehension skills to",
        };
        Self {
            domain,
            text: format!("{{data}}\n\n{CLUSTER_FORMAT} {knowledge} {CLUSTER_TAIL}"),
        }
    }

    pub fn render(&self, data: &str) -> String {
        self.text.replace("{data}", data)
    }
}

/// One template per domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub diagnosis: PromptTemplate,
    pub medication: PromptTemplate,
    pub lab: PromptTemplate,
    pub generic: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            diagnosis: PromptTemplate::builtin(PromptDomain::Diagnosis),
            medication: PromptTemplate::builtin(PromptDomain::Medication),
            lab: PromptTemplate::builtin(PromptDomain::Lab),
            generic: PromptTemplate::builtin(PromptDomain::Generic),
        }
    }
}

impl PromptTemplates {
    pub fn get(&self, domain: PromptDomain) -> &PromptTemplate {
        match domain {
            PromptDomain::Diagnosis => &self.diagnosis,
            PromptDomain::Medication => &self.medication,
            PromptDomain::Lab => &self.lab,
            PromptDomain::Generic => &self.generic,
        }
    }
}

/// A cluster to annotate: its members as (code, description) pairs.
pub type ClusterData = Vec<(String, String)>;

/// Renders clusters as numbered blocks of `code:description` lines.
pub fn render_clusters(clusters: &[ClusterData]) -> String {
    let mut out = String::new();
    for (k, members) in clusters.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Cluster {}:\n", k + 1));
        for (code, desc) in members {
            out.push_str(&format!("{code}:{desc}\n"));
        }
    }
    out.trim_end().to_string()
}

/// Prompt asking how many children are not sub-concepts of the parent.
pub fn hierarchy_prompt(main: &str, subs: &[&str]) -> String {
    format!(
        "I have a main conception \"{main}\" and {} sub-conceptions: {}.\nTell me how many sub-conceptions are not a sub-conception of the main conception.\nAnswer with the digit number only, with no other characters needed.",
        subs.len(),
        subs.join(", ")
    )
}

/// Prompt asking whether sibling annotations are all distinct.
pub fn divergence_prompt(conceptions: &[&str]) -> String {
    format!(
        "I have {} conceptions: {}.\n\nTell me if they are all semantically different (even subtle difference). Answer with \"Yes\" or \"No\", with no other characters needed.",
        conceptions.len(),
        conceptions.join(", ")
    )
}

/// Prompt asking for the relevance of a code to a target concept.
pub fn relevance_prompt(target_desc: &str, code_desc: &str) -> String {
    format!(
        "Is the following medical code/description related to {target_desc}?\n\n{code_desc}\n\nPlease provide a score between 0 and 1 indicating the likelihood that this code is related to {target_desc}. For instance, a score of 1 indicates complete relevance, whereas a score of 0 indicates no relevance. Provide your score as a decimal (e.g. 0.13, 0.75, etc.) without any additional information or explanations."
    )
}
