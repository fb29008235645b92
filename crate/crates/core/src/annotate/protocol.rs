//! Bottom-up annotation of latent nodes over three-layer structures.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::client::ChatClient;
use super::prompts::{render_clusters, ClusterData, PromptDomain, PromptTemplates};
use super::text::top_tokens;
use crate::corpus::{CodeVocabulary, Domain};
use crate::error::Result;
use crate::treebuild::{HierarchyTree, NodeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    /// Requests per structure when the reply cannot be parsed.
    pub max_attempts: usize,
    /// Reject replies containing lines that are not `cluster:description`
    /// or that miss a cluster.
    pub strict: bool,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            max_attempts: 2,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub passes: usize,
    pub requests: usize,
    /// Latent nodes whose annotation is a placeholder, in the order assigned.
    pub placeholders: Vec<String>,
    /// Middle-layer node ids annotated in each pass.
    pub pass_nodes: Vec<Vec<String>>,
}

/// Parses `cluster:description` lines into 0-based cluster indices. The
/// cluster key may be `3`, `Cluster 3` or similar, with surrounding quotes or
/// markdown marks. Returns None in strict mode when any nonblank line fails
/// to parse or any cluster is missing, and in lenient mode when no line
/// parses.
pub fn parse_cluster_reply(reply: &str, k: usize, strict: bool) -> Option<BTreeMap<usize, String>> {
    let strip = |s: &str| s.trim().trim_matches(|c: char| matches!(c, '\'' | '"' | '`' | '*' | '-')).trim().to_string();
    let mut out = BTreeMap::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let parsed = line.split_once(':').and_then(|(key, value)| {
            let key = strip(key).to_lowercase();
            let key = key.strip_prefix("cluster").unwrap_or(&key).trim().to_string();
            let idx: usize = key.parse().ok()?;
            let value = strip(value);
            (1..=k).contains(&idx).then_some(())?;
            (!value.is_empty()).then_some((idx - 1, value))
        });
        match parsed {
            Some((i, v)) => {
                out.entry(i).or_insert(v);
            }
            None if strict => return None,
            None => {}
        }
    }
    if out.is_empty() || (strict && out.len() != k) {
        return None;
    }
    Some(out)
}

/// Placeholder: the two most frequent tokens among the member descriptions.
pub fn placeholder_annotation(members: &ClusterData) -> String {
    let toks = top_tokens(members.iter().map(|(_, d)| d.as_str()), 2);
    if toks.is_empty() {
        members.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>().join(" ")
    } else {
        toks.join(" ")
    }
}

fn member_description(tree: &HierarchyTree, i: usize) -> String {
    let n = tree.node(i);
    let d = n.description();
    if d == n.id {
        String::new()
    } else {
        d.to_string()
    }
}

fn structure_domain(tree: &HierarchyTree, middles: &[usize], vocab: Option<&CodeVocabulary>) -> PromptDomain {
    let Some(vocab) = vocab else {
        return PromptDomain::Generic;
    };
    let mut counts: BTreeMap<Domain, usize> = BTreeMap::new();
    let mut stack: Vec<usize> = middles.to_vec();
    while let Some(i) = stack.pop() {
        let n = tree.node(i);
        if n.kind == NodeKind::Observed {
            if let Some(k) = vocab.index_of(&n.id) {
                *counts.entry(vocab.code(k).domain).or_default() += 1;
            }
        }
        stack.extend(&n.children);
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map_or(PromptDomain::Generic, |(d, _)| d.into())
}

/// Annotates every latent node. In each pass, the unannotated latent nodes
/// whose children are all current leaves are grouped by their parent, one
/// request per group; their children are then removed from consideration
/// so that the annotated nodes act as described leaves in the next pass.
/// Children of non-latent nodes are removed once they are all current
/// leaves. Only annotations change; the topology is untouched.
pub fn annotate_tree(
    tree: &HierarchyTree,
    client: &dyn ChatClient,
    templates: &PromptTemplates,
    vocab: Option<&CodeVocabulary>,
    cfg: &AnnotateConfig,
) -> Result<(HierarchyTree, AnnotationReport)> {
    tree.validate()?;
    let mut out = tree.clone();
    let mut report = AnnotationReport::default();
    let mut removed = vec![false; out.len()];
    let start = client.requests();
    let is_current_leaf = |t: &HierarchyTree, removed: &[bool], i: usize| t.node(i).children.iter().all(|&c| removed[c]);
    loop {
        let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
        let mut passive = Vec::new();
        for i in 0..out.len() {
            let n = out.node(i);
            if removed[i] || n.children.is_empty() || n.children.iter().all(|&c| removed[c]) {
                continue;
            }
            if !n.children.iter().all(|&c| is_current_leaf(&out, &removed, c)) {
                continue;
            }
            if n.kind == NodeKind::Latent && n.annotation.is_none() {
                groups.entry(n.parent).or_default().push(i);
            } else {
                passive.push(i);
            }
        }
        if groups.is_empty() && passive.is_empty() {
            break;
        }
        if !groups.is_empty() {
            report.passes += 1;
            let mut annotated = Vec::new();
            for middles in groups.values() {
                let clusters: Vec<ClusterData> = middles
                    .iter()
                    .map(|&m| {
                        out.node(m)
                            .children
                            .iter()
                            .map(|&c| (out.node(c).id.clone(), member_description(&out, c)))
                            .collect()
                    })
                    .collect();
                let template = templates.get(structure_domain(&out, middles, vocab));
                let prompt = template.render(&render_clusters(&clusters));
                let mut parsed = None;
                for attempt in 0..cfg.max_attempts.max(1) {
                    match client.complete(&prompt) {
                        Ok(reply) => {
                            parsed = parse_cluster_reply(&reply, clusters.len(), cfg.strict);
                            if parsed.is_some() {
                                break;
                            }
                            log::warn!("unparseable annotation reply (attempt {}): {reply:?}", attempt + 1);
                        }
                        Err(e) => log::warn!("annotation request failed (attempt {}): {e}", attempt + 1),
                    }
                }
                let parsed = parsed.unwrap_or_default();
                for (k, &m) in middles.iter().enumerate() {
                    let text = match parsed.get(&k) {
                        Some(t) => t.clone(),
                        None => {
                            report.placeholders.push(out.node(m).id.clone());
                            placeholder_annotation(&clusters[k])
                        }
                    };
                    out.node_mut(m).annotation = Some(text);
                    annotated.push(m);
                }
            }
            for &m in &annotated {
                for c in out.node(m).children.clone() {
                    removed[c] = true;
                }
            }
            report.pass_nodes.push(annotated.iter().map(|&m| out.node(m).id.clone()).collect());
        }
        for &p in &passive {
            for c in out.node(p).children.clone() {
                removed[c] = true;
            }
        }
    }
    for i in 0..out.len() {
        if out.node(i).kind == NodeKind::Latent && out.node(i).annotation.is_none() {
            let members: ClusterData = out.node(i).children.iter().map(|&c| (out.node(c).id.clone(), member_description(&out, c))).collect();
            let text = placeholder_annotation(&members);
            let text = if text.is_empty() { out.node(i).id.clone() } else { text };
            report.placeholders.push(out.node(i).id.clone());
            out.node_mut(i).annotation = Some(text);
        }
    }
    report.requests = client.requests() - start;
    let flagged: BTreeSet<&String> = report.placeholders.iter().collect();
    out.meta.insert("annotation_placeholders".into(), serde_json::json!(flagged));
    out.meta.insert("annotation_passes".into(), serde_json::json!(report.passes));
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::client::StubClient;

    #[test]
    fn lenient_parser_accepts_decorated_keys() {
        let r = parse_cluster_reply("Here you go\n**Cluster 1**: Diabetes\n'2':  Kidney disease \n", 2, false).unwrap();
        assert_eq!(r[&0], "Diabetes");
        assert_eq!(r[&1], "Kidney disease");
        assert!(parse_cluster_reply("Here you go\n1:Diabetes\n2:Kidney", 2, true).is_none());
        assert!(parse_cluster_reply("1:Diabetes", 2, true).is_none());
        assert!(parse_cluster_reply("no colon at all", 2, false).is_none());
        assert!(parse_cluster_reply("3:out of range", 2, false).is_none());
    }

    #[test]
    fn placeholder_uses_top_tokens_or_codes() {
        let m = vec![("a".into(), "Acute renal failure".into()), ("b".into(), "Chronic renal failure".into())];
        assert_eq!(placeholder_annotation(&m), "failure renal");
        let m = vec![("a".into(), String::new()), ("b".into(), String::new())];
        assert_eq!(placeholder_annotation(&m), "a b");
    }

    #[test]
    fn tree_without_latents_is_unchanged() {
        let mut t = HierarchyTree::new();
        let r = t.add_node("r", NodeKind::Observed, "root code").unwrap();
        let c = t.add_node("c", NodeKind::Observed, "child code").unwrap();
        t.set_parent(c, r, None).unwrap();
        let stub = StubClient::new();
        let (out, rep) = annotate_tree(&t, &stub, &PromptTemplates::default(), None, &AnnotateConfig::default()).unwrap();
        assert_eq!(out.nodes(), t.nodes());
        assert_eq!(rep.passes, 0);
        assert_eq!(stub.requests(), 0);
    }
}
