//! Recursive grouping: repeatedly detect bottom sets, introduce their
//! parents, and contract the distance matrix onto the new node set.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::distance::{delta_matrix, DistanceMatrix};
use super::kmeans::{cluster_bottom_sets, ClusterConfig};
use super::tree::{HierarchyTree, NodeKind};
use crate::corpus::ParentMap;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub max_rounds: usize,
    pub cluster: ClusterConfig,
    /// Prefix for generated latent node ids.
    pub latent_prefix: String,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            max_rounds: 25,
            cluster: ClusterConfig::default(),
            latent_prefix: "h".into(),
        }
    }
}

/// Who becomes the parent of a bottom set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupParent {
    /// Singleton cluster: the node moves on unchanged.
    PassThrough,
    /// A member (by position in the current node set) is the known parent of
    /// all other members.
    Member(usize),
    /// All members share this known parent code, not yet in the tree.
    Known(String),
    /// A fresh latent node.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub members: Vec<usize>,
    pub parent: GroupParent,
}

impl Group {
    /// Position in the current node set that represents the group, when the
    /// representative is itself a current node.
    fn member_rep(&self) -> Option<usize> {
        match self.parent {
            GroupParent::PassThrough => Some(self.members[0]),
            GroupParent::Member(m) => Some(m),
            _ => None,
        }
    }
}

/// Decides the parent of every cluster in `labels` (canonical labels over
/// the current node set `ids`). `in_tree` holds ids already placed.
pub fn assign_latents(
    labels: &[usize],
    ids: &[String],
    known: Option<&ParentMap>,
    in_tree: &BTreeSet<String>,
) -> Vec<Group> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members.retain(|m| !m.is_empty());
    members.sort_by_key(|m| m[0]);
    members
        .into_iter()
        .map(|m| {
            if m.len() == 1 {
                return Group {
                    members: m,
                    parent: GroupParent::PassThrough,
                };
            }
            let parent = match known {
                None => GroupParent::Latent,
                Some(map) => {
                    let member_parent = m.iter().copied().find(|&p| {
                        m.iter()
                            .all(|&c| c == p || map.parent(&ids[c]) == Some(ids[p].as_str()))
                    });
                    if let Some(p) = member_parent {
                        GroupParent::Member(p)
                    } else {
                        let first = map.parent(&ids[m[0]]);
                        match first {
                            Some(p)
                                if !in_tree.contains(p)
                                    && m.iter().all(|&c| map.parent(&ids[c]) == Some(p)) =>
                            {
                                GroupParent::Known(p.to_string())
                            }
                            _ => GroupParent::Latent,
                        }
                    }
                }
            };
            Group { members: m, parent }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contraction {
    /// Distances over the new node set, one row per group in order.
    pub distances: Array2<f64>,
    /// For each current node, its (estimated or observed) distance to the
    /// group representative; zero for representatives themselves.
    pub edge_lengths: Vec<f64>,
}

fn estimate_lengths(d: &Array2<f64>, members: &[usize]) -> Vec<f64> {
    let n = d.nrows();
    let inside: BTreeSet<usize> = members.iter().copied().collect();
    let external: Vec<usize> = (0..n).filter(|k| !inside.contains(k)).collect();
    members
        .iter()
        .map(|&u| {
            let others: Vec<usize> = members.iter().copied().filter(|&w| w != u).collect();
            let (sum, count) = if !external.is_empty() {
                let mut s = 0.0;
                for &w in &others {
                    for &k in &external {
                        s += (d[[u, w]] + d[[u, k]] - d[[w, k]]) / 2.0;
                    }
                }
                (s, others.len() * external.len())
            } else if others.len() >= 2 {
                let mut s = 0.0;
                let mut c = 0;
                for (a, &w) in others.iter().enumerate() {
                    for &k in &others[a + 1..] {
                        s += (d[[u, w]] + d[[u, k]] - d[[w, k]]) / 2.0;
                        c += 1;
                    }
                }
                (s, c)
            } else {
                (d[[u, others[0]]] / 2.0, 1)
            };
            (sum / count as f64).max(0.0)
        })
        .collect()
}

/// Contracts `d` onto one node per group, estimating child-to-parent edge
/// lengths from path additivity and latent-to-latent distances as the mean
/// of the residual path lengths between members.
pub fn contract_distances(d: &Array2<f64>, groups: &[Group]) -> Contraction {
    let n = d.nrows();
    let mut edge = vec![0.0; n];
    for g in groups {
        match &g.parent {
            GroupParent::PassThrough => {}
            GroupParent::Member(m) => {
                for &u in &g.members {
                    edge[u] = if u == *m { 0.0 } else { d[[u, *m]] };
                }
            }
            GroupParent::Known(_) | GroupParent::Latent => {
                for (&u, len) in g.members.iter().zip(estimate_lengths(d, &g.members)) {
                    edge[u] = len;
                }
            }
        }
    }
    let k = groups.len();
    let mut out = Array2::zeros((k, k));
    for a in 0..k {
        for b in (a + 1)..k {
            let v = match (groups[a].member_rep(), groups[b].member_rep()) {
                (Some(x), Some(y)) => d[[x, y]],
                _ => {
                    let mut s = 0.0;
                    for &u in &groups[a].members {
                        for &v in &groups[b].members {
                            s += (d[[u, v]] - edge[u] - edge[v]).max(0.0);
                        }
                    }
                    s / (groups[a].members.len() * groups[b].members.len()) as f64
                }
            };
            out[[a, b]] = v;
            out[[b, a]] = v;
        }
    }
    Contraction {
        distances: out,
        edge_lengths: edge,
    }
}

/// Turns a fresh-latent group into a parent-child group when one member sits
/// at (numerically) zero estimated distance from the would-be latent: that
/// member is the parent itself.
pub fn promote_zero_length_members(d: &Array2<f64>, groups: &mut [Group]) {
    let scale = d.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = 1e-9 * scale.max(1.0);
    for g in groups.iter_mut() {
        if g.parent != GroupParent::Latent {
            continue;
        }
        let lengths = estimate_lengths(d, &g.members);
        let (k, &min) = lengths
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty group");
        if min <= tol {
            g.parent = GroupParent::Member(g.members[k]);
        }
    }
}

/// Recovers a rooted tree over the nodes of `d`, adding latent internal
/// nodes. Stops when at most two nodes remain (joining a final pair under a
/// root) or after `max_rounds`, in which case all remaining nodes are joined
/// under one root and the tree is flagged as truncated.
pub fn recursive_grouping(
    d: &DistanceMatrix,
    known: Option<&ParentMap>,
    cfg: &GroupingConfig,
) -> Result<HierarchyTree> {
    if d.len() < 2 {
        return Err(crate::Error::invalid(format!(
            "recursive grouping needs at least 2 nodes, got {}",
            d.len()
        )));
    }
    let mut tree = HierarchyTree::new();
    let mut current: Vec<usize> = Vec::with_capacity(d.len());
    for id in d.ids() {
        current.push(tree.add_node(id.clone(), NodeKind::Observed, id.clone())?);
    }
    let mut dist = d.values().clone();
    let mut counter = 0usize;
    let mut rounds = 0usize;
    let mut new_latent = |tree: &mut HierarchyTree| -> Result<usize> {
        loop {
            counter += 1;
            let id = format!("{}{counter}", cfg.latent_prefix);
            if tree.index_of(&id).is_none() {
                return tree.add_node(id, NodeKind::Latent, "");
            }
        }
    };

    while current.len() > 2 && rounds < cfg.max_rounds {
        rounds += 1;
        let ids: Vec<String> = current.iter().map(|&t| tree.node(t).id.clone()).collect();
        let delta = delta_matrix(&dist)?;
        let labels = cluster_bottom_sets(&delta, &cfg.cluster)?;
        let in_tree: BTreeSet<String> = tree.nodes().iter().map(|n| n.id.clone()).collect();
        let mut groups = assign_latents(&labels, &ids, known, &in_tree);
        if groups.iter().all(|g| g.members.len() == 1) {
            log::warn!("round {rounds}: no bottom set found; joining all nodes under one latent");
            groups = vec![Group {
                members: (0..current.len()).collect(),
                parent: GroupParent::Latent,
            }];
        }
        promote_zero_length_members(&dist, &mut groups);
        let contraction = contract_distances(&dist, &groups);
        let mut next = Vec::with_capacity(groups.len());
        for g in &groups {
            let parent = match &g.parent {
                GroupParent::PassThrough => {
                    next.push(current[g.members[0]]);
                    continue;
                }
                GroupParent::Member(m) => current[*m],
                GroupParent::Known(id) => tree.add_node(id.clone(), NodeKind::Observed, id.clone())?,
                GroupParent::Latent => new_latent(&mut tree)?,
            };
            for &u in &g.members {
                if current[u] != parent {
                    tree.set_parent(current[u], parent, Some(contraction.edge_lengths[u]))?;
                }
            }
            next.push(parent);
        }
        current = next;
        dist = contraction.distances;
    }

    let truncated = current.len() > 2;
    if truncated {
        log::warn!("recursive grouping hit max_rounds = {}; joining {} nodes under the root", cfg.max_rounds, current.len());
    }
    if current.len() >= 2 {
        let root = new_latent(&mut tree)?;
        let all = Group {
            members: (0..current.len()).collect(),
            parent: GroupParent::Latent,
        };
        let lengths = contract_distances(&dist, std::slice::from_ref(&all)).edge_lengths;
        for (k, &t) in current.iter().enumerate() {
            tree.set_parent(t, root, Some(lengths[k]))?;
        }
    }
    tree.meta.insert("rounds".into(), serde_json::json!(rounds));
    tree.meta.insert("truncated".into(), serde_json::json!(truncated));
    tree.validate()?;
    Ok(tree)
}
