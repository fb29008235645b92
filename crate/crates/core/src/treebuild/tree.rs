use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    /// A real code, usually a leaf; reused known parents are observed too.
    Observed,
    /// An introduced internal node standing for an unobserved concept.
    Latent,
    /// User-defined top-level structure (the global root and category roots).
    Category,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    pub annotation: Option<String>,
    pub parent: Option<usize>,
    /// Kept sorted by node index.
    pub children: Vec<usize>,
    /// Length of the edge to the parent, when known or estimated.
    pub edge_weight: Option<f64>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Text describing the node: its annotation if present, else its label.
    pub fn description(&self) -> &str {
        self.annotation.as_deref().unwrap_or(&self.label)
    }
}

/// Rooted forest of observed codes and latent internal nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HierarchyTree {
    nodes: Vec<TreeNode>,
    index: BTreeMap<String, usize>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl HierarchyTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>, kind: NodeKind, label: impl Into<String>) -> Result<usize> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate tree node id {id:?}")));
        }
        let idx = self.nodes.len();
        self.index.insert(id.clone(), idx);
        self.nodes.push(TreeNode {
            id,
            kind,
            label: label.into(),
            annotation: None,
            parent: None,
            children: Vec::new(),
            edge_weight: None,
        });
        Ok(idx)
    }

    /// Attaches `child` under `parent`. Fails if `child` already has a parent
    /// or the edge would close a cycle.
    pub fn set_parent(&mut self, child: usize, parent: usize, edge_weight: Option<f64>) -> Result<()> {
        if child == parent {
            return Err(Error::invalid("node cannot be its own parent"));
        }
        if let Some(p) = self.nodes[child].parent {
            return Err(Error::invalid(format!(
                "node {:?} already has parent {:?}",
                self.nodes[child].id, self.nodes[p].id
            )));
        }
        let mut cur = Some(parent);
        while let Some(c) = cur {
            if c == child {
                return Err(Error::invalid("edge would create a cycle"));
            }
            cur = self.nodes[c].parent;
        }
        self.nodes[child].parent = Some(parent);
        self.nodes[child].edge_weight = edge_weight;
        let kids = &mut self.nodes[parent].children;
        let pos = kids.binary_search(&child).unwrap_or_else(|p| p);
        kids.insert(pos, child);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut TreeNode {
        &mut self.nodes[i]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].parent.is_none()).collect()
    }

    pub fn depth(&self, mut i: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[i].parent {
            d += 1;
            i = p;
        }
        d
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_leaf())
            .map(|i| self.depth(i))
            .max()
            .unwrap_or(0)
    }

    pub fn observed_ids(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Observed)
            .map(|n| n.id.as_str())
            .collect()
    }

    /// Sum of edge weights on the path between two nodes, if every edge on
    /// it carries a weight.
    pub fn path_length(&self, a: usize, b: usize) -> Option<f64> {
        let mut up_a = BTreeMap::new();
        let mut acc = 0.0;
        let mut cur = a;
        up_a.insert(cur, 0.0);
        while let Some(p) = self.nodes[cur].parent {
            acc += self.nodes[cur].edge_weight?;
            cur = p;
            up_a.insert(cur, acc);
        }
        let mut acc_b = 0.0;
        let mut cur = b;
        loop {
            if let Some(&da) = up_a.get(&cur) {
                return Some(da + acc_b);
            }
            let p = self.nodes[cur].parent?;
            acc_b += self.nodes[cur].edge_weight?;
            cur = p;
        }
    }

    /// Copies `other` into this tree, attaching its roots under `parent`.
    /// Returns the mapping from `other` indices to new indices.
    pub fn graft(&mut self, other: &HierarchyTree, parent: Option<usize>) -> Result<Vec<usize>> {
        let mut map = Vec::with_capacity(other.len());
        for n in &other.nodes {
            let idx = self.add_node(n.id.clone(), n.kind, n.label.clone())?;
            self.nodes[idx].annotation = n.annotation.clone();
            map.push(idx);
        }
        for (i, n) in other.nodes.iter().enumerate() {
            match (n.parent, parent) {
                (Some(p), _) => self.set_parent(map[i], map[p], n.edge_weight)?,
                (None, Some(root)) => self.set_parent(map[i], root, n.edge_weight)?,
                (None, None) => {}
            }
        }
        Ok(map)
    }

    /// Copies `other` except its node `skip` into this tree. Nodes that hung
    /// below `skip` attach to `parent` with their original edge weights.
    pub fn graft_children(&mut self, other: &HierarchyTree, skip: usize, parent: usize) -> Result<()> {
        let mut map = vec![usize::MAX; other.len()];
        for (i, n) in other.nodes.iter().enumerate() {
            if i == skip {
                continue;
            }
            let idx = self.add_node(n.id.clone(), n.kind, n.label.clone())?;
            self.nodes[idx].annotation = n.annotation.clone();
            map[i] = idx;
        }
        for (i, n) in other.nodes.iter().enumerate() {
            match n.parent {
                _ if i == skip => {}
                Some(p) if p == skip => self.set_parent(map[i], parent, n.edge_weight)?,
                Some(p) => self.set_parent(map[i], map[p], n.edge_weight)?,
                None => {}
            }
        }
        Ok(())
    }

    /// Checks structural invariants: acyclic parent pointers consistent with
    /// child lists, unique ids, and every latent node having ≥ 2 children.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if self.index.get(&n.id) != Some(&i) {
                return Err(Error::Internal(format!("index out of sync for {:?}", n.id)));
            }
            if let Some(p) = n.parent {
                if p >= self.nodes.len() || self.nodes[p].children.binary_search(&i).is_err() {
                    return Err(Error::Internal(format!("dangling parent pointer on {:?}", n.id)));
                }
            }
            for &c in &n.children {
                if self.nodes[c].parent != Some(i) {
                    return Err(Error::Internal(format!("child list of {:?} inconsistent", n.id)));
                }
            }
            if n.kind == NodeKind::Latent && n.children.len() < 2 {
                return Err(Error::Internal(format!(
                    "latent node {:?} has {} children",
                    n.id,
                    n.children.len()
                )));
            }
            let mut steps = 0;
            let mut cur = i;
            while let Some(p) = self.nodes[cur].parent {
                steps += 1;
                if steps > self.nodes.len() {
                    return Err(Error::Internal(format!("cycle through {:?}", n.id)));
                }
                cur = p;
            }
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let doc = TreeDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.clone(),
                    kind: n.kind,
                    label: n.label.clone(),
                    annotation: n.annotation.clone(),
                    parent: n.parent.map(|p| self.nodes[p].id.clone()),
                    edge_weight: n.edge_weight,
                })
                .collect(),
            roots: self.roots().into_iter().map(|r| self.nodes[r].id.clone()).collect(),
            meta: self.meta.clone(),
        };
        serde_json::to_value(doc).expect("tree document serializes")
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.to_json_value())?;
        writeln!(w)?;
        Ok(())
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let doc: TreeDoc = serde_json::from_value(value)?;
        let mut tree = HierarchyTree::new();
        for n in &doc.nodes {
            let idx = tree.add_node(n.id.clone(), n.kind, n.label.clone())?;
            tree.nodes[idx].annotation = n.annotation.clone();
        }
        for (i, n) in doc.nodes.iter().enumerate() {
            if let Some(p) = &n.parent {
                let pi = tree
                    .index_of(p)
                    .ok_or_else(|| Error::invalid(format!("unknown parent {p:?} of {:?}", n.id)))?;
                tree.set_parent(i, pi, n.edge_weight)?;
            } else {
                tree.nodes[i].edge_weight = n.edge_weight;
            }
        }
        let roots: Vec<String> = tree.roots().into_iter().map(|r| tree.nodes[r].id.clone()).collect();
        if roots != doc.roots {
            return Err(Error::invalid("roots list does not match parent pointers"));
        }
        tree.meta = doc.meta;
        tree.validate()?;
        Ok(tree)
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(r)?;
        Self::from_json_value(value)
    }

    /// Graphviz DOT rendering.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph hierarchy {\n  node [shape=box];\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let style = match n.kind {
                NodeKind::Observed => "",
                NodeKind::Latent => ", style=dashed",
                NodeKind::Category => ", style=bold",
            };
            let text = format!("{}\\n{}", n.id, n.description()).replace('"', "'");
            s.push_str(&format!("  n{i} [label=\"{text}\"{style}];\n"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                s.push_str(&format!("  n{p} -> n{i};\n"));
            }
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: NodeKind,
    label: String,
    annotation: Option<String>,
    parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_weight: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    nodes: Vec<NodeDoc>,
    roots: Vec<String>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}
