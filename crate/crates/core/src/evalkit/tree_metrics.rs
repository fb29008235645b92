//! Metrics that compare recovered trees with reference trees.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::treebuild::{HierarchyTree, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Each observed leaf is labelled by its parent.
    ParentOfLeaf,
    /// Each observed leaf is labelled by its ancestor at this depth (the leaf
    /// itself when it is shallower).
    DepthCut(usize),
}

/// Maps every observed leaf id to a cluster label (an ancestor's id).
pub fn partition_from_tree(tree: &HierarchyTree, mode: PartitionMode) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (i, node) in tree.nodes().iter().enumerate() {
        if node.kind != NodeKind::Observed || !node.is_leaf() {
            continue;
        }
        let label = match mode {
            PartitionMode::ParentOfLeaf => node.parent.unwrap_or(i),
            PartitionMode::DepthCut(level) => {
                let mut cur = i;
                let mut depth = tree.depth(i);
                while depth > level {
                    cur = tree.node(cur).parent.expect("depth > 0 implies a parent");
                    depth -= 1;
                }
                cur
            }
        };
        out.insert(node.id.clone(), tree.node(label).id.clone());
    }
    out
}

fn sibling_pairs(tree: &HierarchyTree, keep: &BTreeSet<&str>) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for node in tree.nodes() {
        let kids: Vec<&str> = node
            .children
            .iter()
            .map(|&c| tree.node(c))
            .filter(|c| c.kind == NodeKind::Observed && keep.contains(c.id.as_str()))
            .map(|c| c.id.as_str())
            .collect();
        for a in 0..kids.len() {
            for b in (a + 1)..kids.len() {
                let (x, y) = (kids[a].min(kids[b]), kids[a].max(kids[b]));
                out.insert((x.to_string(), y.to_string()));
            }
        }
    }
    out
}

/// Precision and sensitivity of sibling pairs (observed codes sharing a
/// parent) over the observed codes present in both trees. An undefined ratio
/// is NaN with a warning.
pub fn sibling_precision_sensitivity(constructed: &HierarchyTree, reference: &HierarchyTree) -> (f64, f64) {
    let a = constructed.observed_ids();
    let b = reference.observed_ids();
    let keep: BTreeSet<&str> = a.intersection(&b).copied().collect();
    let pred = sibling_pairs(constructed, &keep);
    let truth = sibling_pairs(reference, &keep);
    let hit = pred.intersection(&truth).count() as f64;
    let ratio = |den: usize, what: &str| {
        if den == 0 {
            log::warn!("sibling {what} undefined: no pairs");
            f64::NAN
        } else {
            hit / den as f64
        }
    };
    (ratio(pred.len(), "precision"), ratio(truth.len(), "sensitivity"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(edges: &[(&str, &str)], observed: &[&str]) -> HierarchyTree {
        let mut t = HierarchyTree::new();
        for &(c, p) in edges {
            for id in [p, c] {
                if t.index_of(id).is_none() {
                    let kind = if observed.contains(&id) { NodeKind::Observed } else { NodeKind::Latent };
                    t.add_node(id, kind, id).unwrap();
                }
            }
            let (ci, pi) = (t.index_of(c).unwrap(), t.index_of(p).unwrap());
            t.set_parent(ci, pi, Some(1.0)).unwrap();
        }
        t
    }

    #[test]
    fn star_is_one_cluster() {
        let t = build(&[("a", "r"), ("b", "r"), ("c", "r")], &["a", "b", "c"]);
        let p = partition_from_tree(&t, PartitionMode::ParentOfLeaf);
        assert_eq!(p.values().collect::<BTreeSet<_>>().len(), 1);
    }

    #[test]
    fn everything_under_one_parent_versus_two_families() {
        let leaves = ["a", "b", "c", "d"];
        let flat = build(&[("a", "r"), ("b", "r"), ("c", "r"), ("d", "r")], &leaves);
        let two = build(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y"), ("x", "r"), ("y", "r")], &leaves);
        let (p, s) = sibling_precision_sensitivity(&flat, &two);
        assert!((p - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(s, 1.0);
        let cross = build(&[("a", "x"), ("c", "x"), ("b", "y"), ("d", "y"), ("x", "r"), ("y", "r")], &leaves);
        assert_eq!(sibling_precision_sensitivity(&cross, &two), (0.0, 0.0));
    }
}
