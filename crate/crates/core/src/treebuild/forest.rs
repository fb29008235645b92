//! Category-level forests: one recursive-grouping tree per user-defined
//! top-level category, joined under a global root.

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::Deserialize;

use super::distance::DistanceMatrix;
use super::grouping::{recursive_grouping, GroupingConfig};
use super::tree::{HierarchyTree, NodeKind};
use crate::corpus::{CodeVocabulary, ParentMap};
use crate::error::{Error, Result};
use crate::hyperembed::{lorentz_distance_rows, LorentzEmbedding};

pub const ROOT_ID: &str = "root";

/// Maps code ids to top-level category names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryMap {
    map: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct CategoryRow {
    code_id: String,
    category: String,
}

impl CategoryMap {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        Self { map }
    }

    /// Every code in one category.
    pub fn single<'a>(codes: impl IntoIterator<Item = &'a str>, category: &str) -> Self {
        Self::new(codes.into_iter().map(|c| (c.to_string(), category.to_string())).collect())
    }

    pub fn get(&self, code: &str) -> Option<&str> {
        self.map.get(code).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// CSV with header `code_id,category`.
    pub fn read_csv<R: Read>(reader: R, label: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut map = BTreeMap::new();
        for (k, row) in rdr.deserialize::<CategoryRow>().enumerate() {
            let line = k + 2;
            let row = row.map_err(|e| Error::data(label, line, e.to_string()))?;
            if row.category.is_empty() {
                return Err(Error::data(label, line, "empty category"));
            }
            if map.insert(row.code_id.clone(), row.category).is_some() {
                return Err(Error::data(label, line, format!("code {:?} listed twice", row.code_id)));
            }
        }
        Ok(Self { map })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["code_id", "category"])?;
        for (c, cat) in &self.map {
            w.write_record([c, cat])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Groups `codes` (by position) per category; errors on an uncategorized
    /// code.
    pub fn partition(&self, codes: &[String]) -> Result<BTreeMap<String, Vec<usize>>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, c) in codes.iter().enumerate() {
            let cat = self
                .get(c)
                .ok_or_else(|| Error::invalid(format!("code {c:?} has no category")))?;
            out.entry(cat.to_string()).or_default().push(i);
        }
        Ok(out)
    }
}

/// Builds the forest over `codes` with pairwise distances `dist(i, j)` given
/// by position. Latent ids are prefixed with the category name so they stay
/// unique across categories. Labels come from `vocab` when supplied.
pub fn build_forest_with<F>(
    codes: &[String],
    dist: F,
    categories: &CategoryMap,
    known: Option<&ParentMap>,
    vocab: Option<&CodeVocabulary>,
    cfg: &GroupingConfig,
) -> Result<HierarchyTree>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let parts = categories.partition(codes)?;
    let unused = categories.iter().filter(|(c, _)| !codes.iter().any(|x| x == c)).count();
    if unused > 0 {
        log::warn!("{unused} categorized codes are absent from the embedding");
    }
    let parts: Vec<(String, Vec<usize>)> = parts.into_iter().collect();
    let subtrees: Vec<Result<Option<HierarchyTree>>> = parts
        .par_iter()
        .map(|(cat, members)| {
            if members.len() < 2 {
                return Ok(None);
            }
            let ids: Vec<String> = members.iter().map(|&i| codes[i].clone()).collect();
            let d = DistanceMatrix::from_fn(ids, |a, b| dist(members[a], members[b]))?;
            let sub_cfg = GroupingConfig {
                latent_prefix: format!("{cat}:{}", cfg.latent_prefix),
                ..cfg.clone()
            };
            recursive_grouping(&d, known, &sub_cfg).map(Some)
        })
        .collect();

    let mut tree = HierarchyTree::new();
    let root = tree.add_node(ROOT_ID, NodeKind::Category, ROOT_ID)?;
    let mut truncated = Vec::new();
    for ((cat, members), sub) in parts.iter().zip(subtrees) {
        let cat_node = tree.add_node(format!("category:{cat}"), NodeKind::Category, cat.clone())?;
        tree.set_parent(cat_node, root, None)?;
        match sub? {
            None => {
                let leaf = tree.add_node(codes[members[0]].clone(), NodeKind::Observed, codes[members[0]].clone())?;
                tree.set_parent(leaf, cat_node, None)?;
            }
            Some(sub) => {
                if sub.meta.get("truncated") == Some(&serde_json::json!(true)) {
                    truncated.push(cat.clone());
                }
                let sub_root = sub.roots()[0];
                if sub.node(sub_root).kind == NodeKind::Latent {
                    tree.graft_children(&sub, sub_root, cat_node)?;
                } else {
                    tree.graft(&sub, Some(cat_node))?;
                }
            }
        }
    }
    if let Some(v) = vocab {
        for i in 0..tree.len() {
            let node = tree.node(i);
            if node.kind == NodeKind::Observed {
                if let Some(k) = v.index_of(&node.id) {
                    let desc = v.code(k).description.clone();
                    tree.node_mut(i).label = desc;
                }
            }
        }
    }
    tree.meta.insert("categories".into(), serde_json::json!(parts.len()));
    tree.meta.insert("truncated_categories".into(), serde_json::json!(truncated));
    tree.validate()?;
    Ok(tree)
}

/// Builds the forest from pairwise Lorentzian distances of `emb`.
pub fn build_forest(
    emb: &LorentzEmbedding,
    categories: &CategoryMap,
    known: Option<&ParentMap>,
    vocab: Option<&CodeVocabulary>,
    cfg: &GroupingConfig,
) -> Result<HierarchyTree> {
    let z = emb.coords();
    build_forest_with(
        emb.codes(),
        |i, j| lorentz_distance_rows(z.row(i), z.row(j)),
        categories,
        known,
        vocab,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star_dist(codes: &[String]) -> impl Fn(usize, usize) -> f64 + Sync + '_ {
        // two groups by id prefix, siblings at distance 2, across groups 4
        move |i, j| {
            if i == j {
                0.0
            } else if codes[i].as_bytes()[0] == codes[j].as_bytes()[0] {
                2.0
            } else {
                4.0
            }
        }
    }

    #[test]
    fn one_category_wraps_grouping_result() {
        let codes: Vec<String> = ["a1", "a2", "b1", "b2"].iter().map(|s| s.to_string()).collect();
        let cats = CategoryMap::single(codes.iter().map(String::as_str), "All");
        let t = build_forest_with(&codes, star_dist(&codes), &cats, None, None, &GroupingConfig::default()).unwrap();
        let cat = t.index_of("category:All").unwrap();
        assert_eq!(t.node(cat).children.len(), 2);
        assert_eq!(t.len(), 2 + 4 + 2);
        assert_eq!(t.roots(), vec![t.index_of(ROOT_ID).unwrap()]);
    }

    #[test]
    fn single_code_category_hangs_off_category_node() {
        let codes: Vec<String> = ["a1", "a2", "a3", "z"].iter().map(|s| s.to_string()).collect();
        let mut m = BTreeMap::new();
        for c in &codes[..3] {
            m.insert(c.clone(), "A".to_string());
        }
        m.insert("z".into(), "Z".into());
        let t = build_forest_with(&codes, star_dist(&codes), &CategoryMap::new(m), None, None, &GroupingConfig::default())
            .unwrap();
        let z = t.index_of("z").unwrap();
        assert_eq!(t.node(t.node(z).parent.unwrap()).id, "category:Z");
        let a = t.index_of("category:A").unwrap();
        assert_eq!(t.node(a).children.len(), 3);
    }

    #[test]
    fn uncategorized_code_is_rejected() {
        let codes = vec!["x".to_string(), "y".to_string()];
        let cats = CategoryMap::single(["x"], "A");
        assert!(build_forest_with(&codes, |_, _| 1.0, &cats, None, None, &GroupingConfig::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cats = CategoryMap::single(["x", "y"], "Circulatory");
        let mut buf = Vec::new();
        cats.write_csv(&mut buf).unwrap();
        assert_eq!(CategoryMap::read_csv(buf.as_slice(), "t").unwrap(), cats);
    }
}
