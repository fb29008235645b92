//! Judged interpretability scores and code-relevance scoring.

use serde::{Deserialize, Serialize};

use super::client::ChatClient;
use super::prompts::{divergence_prompt, hierarchy_prompt, relevance_prompt};
use crate::error::Result;
use crate::treebuild::{HierarchyTree, NodeKind, ROOT_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgedScore {
    /// Mean of the per-item scores; NaN when nothing was scored.
    pub score: f64,
    pub scored: usize,
    /// Items skipped because the reply could not be interpreted.
    pub excluded: usize,
}

impl JudgedScore {
    fn from_items(items: &[f64], excluded: usize, what: &str) -> Self {
        let score = if items.is_empty() {
            log::warn!("no {what} could be scored");
            f64::NAN
        } else {
            items.iter().sum::<f64>() / items.len() as f64
        };
        Self {
            score,
            scored: items.len(),
            excluded,
        }
    }
}

fn clean(reply: &str) -> String {
    reply.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '.' | '*')).trim().to_string()
}

/// Internal nodes scored by the hierarchy prompt: every node with children
/// except the synthetic forest root.
fn internal_nodes(tree: &HierarchyTree) -> impl Iterator<Item = usize> + '_ {
    (0..tree.len()).filter(move |&i| {
        let n = tree.node(i);
        !n.children.is_empty() && !(n.kind == NodeKind::Category && n.id == ROOT_ID)
    })
}

/// Fraction of internal nodes whose children the judge accepts as
/// sub-concepts of the node's description (reply "0").
pub fn hierarchy_score(tree: &HierarchyTree, client: &dyn ChatClient) -> Result<JudgedScore> {
    let mut items = Vec::new();
    let mut excluded = 0;
    for i in internal_nodes(tree) {
        let n = tree.node(i);
        let subs: Vec<&str> = n.children.iter().map(|&c| tree.node(c).description()).collect();
        let reply = client.complete(&hierarchy_prompt(n.description(), &subs))?;
        match clean(&reply).parse::<u32>() {
            Ok(k) => items.push(if k == 0 { 1.0 } else { 0.0 }),
            Err(_) => {
                log::warn!("node {}: non-digit hierarchy reply {reply:?}; excluded", n.id);
                excluded += 1;
            }
        }
    }
    Ok(JudgedScore::from_items(&items, excluded, "internal node"))
}

/// Sets of at least two annotated latent siblings, in parent order.
pub fn latent_sibling_sets(tree: &HierarchyTree) -> Vec<Vec<usize>> {
    (0..tree.len())
        .map(|p| {
            tree.node(p)
                .children
                .iter()
                .copied()
                .filter(|&c| tree.node(c).kind == NodeKind::Latent && tree.node(c).annotation.is_some())
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() >= 2)
        .collect()
}

/// Fraction of latent sibling sets whose annotations the judge considers
/// all distinct (reply "Yes").
pub fn divergence_score(tree: &HierarchyTree, client: &dyn ChatClient) -> Result<JudgedScore> {
    let mut items = Vec::new();
    let mut excluded = 0;
    for set in latent_sibling_sets(tree) {
        let names: Vec<&str> = set.iter().map(|&c| tree.node(c).description()).collect();
        let reply = client.complete(&divergence_prompt(&names))?;
        match clean(&reply).to_lowercase().as_str() {
            "yes" => items.push(1.0),
            "no" => items.push(0.0),
            _ => {
                log::warn!("unexpected divergence reply {reply:?}; sibling set excluded");
                excluded += 1;
            }
        }
    }
    Ok(JudgedScore::from_items(&items, excluded, "sibling set"))
}

/// Judged relevance of a code description to a target, in [0, 1]; None
/// when the reply is not such a number.
pub fn relevance_score(client: &dyn ChatClient, target_desc: &str, code_desc: &str) -> Result<Option<f64>> {
    let reply = client.complete(&relevance_prompt(target_desc, code_desc))?;
    let v = clean(&reply).parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v));
    if v.is_none() {
        log::warn!("unparseable relevance reply {reply:?}");
    }
    Ok(v)
}
