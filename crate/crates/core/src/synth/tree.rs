//! Random ground-truth trees with exact path-additive distances.

use ndarray::Array2;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::treebuild::{HierarchyTree, NodeKind};

/// A generated tree together with its cached distance matrices.
#[derive(Debug, Clone)]
pub struct GroundTruthTree {
    tree: HierarchyTree,
    leaves: Vec<usize>,
    /// Path lengths between every pair of nodes, indexed by tree node.
    node_dist: Array2<f64>,
}

impl GroundTruthTree {
    /// Wraps an existing tree whose non-root nodes all carry edge weights.
    pub fn from_tree(tree: HierarchyTree) -> Result<Self> {
        tree.validate()?;
        if tree.roots().len() != 1 {
            return Err(Error::invalid("ground-truth tree must have a single root"));
        }
        let n = tree.len();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, node) in tree.nodes().iter().enumerate() {
            if let Some(p) = node.parent {
                let w = node
                    .edge_weight
                    .filter(|w| *w > 0.0)
                    .ok_or_else(|| Error::invalid(format!("node {:?} lacks a positive edge weight", node.id)))?;
                adj[i].push((p, w));
                adj[p].push((i, w));
            }
        }
        let mut node_dist = Array2::zeros((n, n));
        for s in 0..n {
            let mut stack = vec![(s, usize::MAX, 0.0)];
            while let Some((v, from, d)) = stack.pop() {
                node_dist[[s, v]] = d;
                for &(u, w) in &adj[v] {
                    if u != from {
                        stack.push((u, v, d + w));
                    }
                }
            }
        }
        let leaves = (0..n).filter(|&i| tree.node(i).is_leaf()).collect();
        Ok(Self { tree, leaves, node_dist })
    }

    pub fn tree(&self) -> &HierarchyTree {
        &self.tree
    }

    /// Tree node indices of the leaves, in index order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_ids(&self) -> Vec<String> {
        self.leaves.iter().map(|&i| self.tree.node(i).id.clone()).collect()
    }

    /// Leaf-to-leaf path lengths in [`Self::leaves`] order.
    pub fn leaf_distances(&self) -> Array2<f64> {
        self.distances_among(&self.leaves)
    }

    /// Path lengths among the given tree nodes.
    pub fn distances_among(&self, nodes: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((nodes.len(), nodes.len()), |(a, b)| self.node_dist[[nodes[a], nodes[b]]])
    }

    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        self.node_dist[[a, b]]
    }

    pub fn root(&self) -> usize {
        self.tree.roots()[0]
    }
}

/// Grows a random rooted tree with exactly `n_leaves` leaves.
///
/// The root receives between 3 and `max_branching` children when
/// `max_branching ≥ 3`; a root of degree two is invisible to leaf distances.
/// Afterwards a uniformly chosen leaf is expanded into 2..=`max_branching`
/// children until the leaf count is reached. Leaves are named `c0, c1, …` and
/// internal nodes `g0, g1, …` (root `g0`); edge weights are uniform in
/// `[lo, hi]`.
pub fn generate_tree(n_leaves: usize, max_branching: usize, weights: (f64, f64), seed: u64) -> Result<GroundTruthTree> {
    if n_leaves < 3 {
        return Err(Error::invalid(format!("n_leaves must be ≥ 3, got {n_leaves}")));
    }
    if max_branching < 2 {
        return Err(Error::invalid(format!("max_branching must be ≥ 2, got {max_branching}")));
    }
    let (lo, hi) = weights;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!("edge weight range ({lo}, {hi}) must satisfy 0 < lo ≤ hi")));
    }
    let mut rng = substream(seed, "synth.tree");
    // parent[i], using None for the root
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut leaves: Vec<usize> = Vec::new();
    let root_min = 3.min(max_branching);
    let root_max = max_branching.min(n_leaves);
    let b0 = rng.random_range(root_min..=root_max);
    for _ in 0..b0 {
        parent.push(Some(0));
        leaves.push(parent.len() - 1);
    }
    while leaves.len() < n_leaves {
        let remaining = n_leaves - leaves.len();
        let pos = rng.random_range(0..leaves.len());
        let v = leaves.swap_remove(pos);
        let b = rng.random_range(2..=max_branching.min(remaining + 1));
        for _ in 0..b {
            parent.push(Some(v));
            leaves.push(parent.len() - 1);
        }
    }
    let weights: Vec<f64> = parent.iter().map(|_| rng.random_range(lo..=hi)).collect();

    let is_leaf: Vec<bool> = {
        let mut has_child = vec![false; parent.len()];
        for p in parent.iter().flatten() {
            has_child[*p] = true;
        }
        has_child.into_iter().map(|h| !h).collect()
    };
    let mut tree = HierarchyTree::new();
    let (mut nl, mut ni) = (0, 0);
    for &leaf in &is_leaf {
        let (id, kind) = if leaf {
            nl += 1;
            (format!("c{}", nl - 1), NodeKind::Observed)
        } else {
            ni += 1;
            (format!("g{}", ni - 1), NodeKind::Latent)
        };
        tree.add_node(id.clone(), kind, id)?;
    }
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            tree.set_parent(i, *p, Some(weights[i]))?;
        }
    }
    GroundTruthTree::from_tree(tree)
}
