//! A fully synthetic coding world: a ground-truth hierarchy, code metadata,
//! noise-free and per-source embeddings, patient event streams, and labeled
//! evaluation pairs, all derived from one seed.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tree::{generate_tree, GroundTruthTree};
use crate::corpus::{Code, CodeVocabulary, Domain, EmbeddingMatrix, Event, ParentMap};
use crate::error::{Error, Result};
use crate::evalkit::{LabeledPair, LabeledPairs, Relation, Split};
use crate::rng::{substream, Rng};
use crate::treebuild::{CategoryMap, NodeKind};

const WORDS: &[&str] = &[
    "cardiac", "renal", "hepatic", "pulmonary", "neural", "vascular", "gastric", "dermal", "ocular", "skeletal",
    "muscular", "endocrine", "immune", "metabolic", "hematic", "lymphatic", "thyroid", "adrenal", "pancreatic",
    "biliary", "colonic", "esophageal", "cerebral", "spinal", "retinal", "cochlear", "dental", "pelvic", "thoracic",
    "cranial", "synovial", "valvular", "arterial", "venous", "bronchial", "pleural", "urinary", "ovarian",
    "prostatic", "mammary", "splenic", "osseous", "cutaneous", "nasal", "laryngeal", "tracheal", "pericardial",
    "peritoneal", "ureteral", "vesical",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_leaves: usize,
    pub max_branching: usize,
    pub edge_weights: (f64, f64),
    /// Expose internal nodes below the root as codes with known children.
    pub internal_codes: bool,
    /// Dimension of the noise-free embedding.
    pub dim: usize,
    /// Length scale of the similarity kernel exp(−d / scale).
    pub kernel_scale: f64,
    /// Cap on training and test pairs per relation (after splitting).
    pub max_pairs_per_relation: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_leaves: 60,
            max_branching: 4,
            edge_weights: (0.5, 1.5),
            internal_codes: true,
            dim: 16,
            kernel_scale: 4.0,
            max_pairs_per_relation: 400,
            seed: 0,
        }
    }
}

/// How one co-occurrence source or language-model source observes codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Standard deviation of the per-coordinate Gaussian noise, relative to
    /// unit-norm rows (scaled by 1/√dim).
    pub noise: f64,
    /// Apply a random orthogonal transform before adding noise.
    pub rotate: bool,
    /// Fraction of codes the source observes.
    pub coverage: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            noise: 1.0,
            rotate: true,
            coverage: 1.0,
        }
    }
}

/// Patient event generation for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventConfig {
    pub patients: usize,
    pub events_per_patient: usize,
    /// Probability an event's code is drawn uniformly instead of from the
    /// patient's focal subtree.
    pub background: f64,
    /// Events fall within this many days of the patient's first date.
    pub span_days: u32,
    pub coverage: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            patients: 600,
            events_per_patient: 10,
            background: 0.1,
            span_days: 60,
            coverage: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub truth: GroundTruthTree,
    pub vocab: CodeVocabulary,
    /// Tree node index of every vocabulary code, in vocabulary order.
    pub code_nodes: Vec<usize>,
    pub parents: ParentMap,
    pub categories: CategoryMap,
    /// Noise-free unit-norm embedding in vocabulary order.
    pub base: EmbeddingMatrix,
    pub pairs: LabeledPairs,
}

fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Haar-random orthogonal matrix via QR with sign correction.
pub fn random_orthogonal(dim: usize, rng: &mut Rng) -> Array2<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    Array2::from_shape_fn((dim, dim), |(i, j)| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    })
}

impl SyntheticWorld {
    pub fn generate(cfg: &WorldConfig) -> Result<Self> {
        let truth = generate_tree(cfg.n_leaves, cfg.max_branching, cfg.edge_weights, cfg.seed)?;
        let tree = truth.tree();
        let root = truth.root();
        let mut word_rng = substream(cfg.seed, "synth.world.words");
        let mut words: Vec<&str> = WORDS.to_vec();
        words.shuffle(&mut word_rng);
        let internal: Vec<usize> = (0..tree.len()).filter(|&i| !tree.node(i).is_leaf()).collect();
        let word_of: BTreeMap<usize, String> = internal
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let w = words[k % words.len()];
                let w = if k >= words.len() { format!("{w}{}", k / words.len()) } else { w.to_string() };
                (i, w)
            })
            .collect();

        // category = the root child whose subtree holds the node
        let top_of = |mut i: usize| -> usize {
            while let Some(p) = tree.node(i).parent {
                if p == root {
                    return i;
                }
                i = p;
            }
            i
        };
        let domains = [Domain::Diagnosis, Domain::Medication, Domain::Lab];
        let tops: Vec<usize> = tree.node(root).children.clone();

        let mut codes = Vec::new();
        let mut code_nodes = Vec::new();
        for i in 0..tree.len() {
            let node = tree.node(i);
            if i == root || (!node.is_leaf() && !cfg.internal_codes) {
                continue;
            }
            let parent = node.parent.expect("non-root");
            let pw = &word_of[&parent];
            let description = if node.is_leaf() {
                format!("{pw} disorder type {}", &node.id[1..])
            } else {
                let own = &word_of[&i];
                if parent == root {
                    format!("{own} conditions")
                } else {
                    format!("{own} {pw} conditions")
                }
            };
            let cat = tops.iter().position(|&t| t == top_of(i)).expect("top-level ancestor");
            codes.push(Code {
                id: node.id.clone(),
                description,
                domain: domains[cat % domains.len()],
                sources: BTreeSet::new(),
            });
            code_nodes.push(i);
        }
        let vocab = CodeVocabulary::new(codes)?;
        let code_set: BTreeSet<usize> = code_nodes.iter().copied().collect();

        let mut edges = BTreeMap::new();
        let mut cats = BTreeMap::new();
        for &i in &code_nodes {
            let node = tree.node(i);
            let p = node.parent.expect("non-root");
            if code_set.contains(&p) {
                edges.insert(node.id.clone(), tree.node(p).id.clone());
            }
            let t = top_of(i);
            cats.insert(node.id.clone(), format!("{}-{}", word_of.get(&t).map_or("leaf", String::as_str), tree.node(t).id));
        }
        let parents = ParentMap::new(edges)?;
        let categories = CategoryMap::new(cats);

        let base = kernel_embedding(&truth.distances_among(&code_nodes), cfg.dim, cfg.kernel_scale, vocab.ids())?;
        let pairs = label_pairs(&truth, &code_nodes, cfg)?;
        Ok(Self {
            config: cfg.clone(),
            truth,
            vocab,
            code_nodes,
            parents,
            categories,
            base,
            pairs,
        })
    }

    pub fn codes(&self) -> Vec<String> {
        self.vocab.ids().map(str::to_string).collect()
    }

    /// Leaf codes (observed leaves of the ground truth) in vocabulary order.
    pub fn leaf_codes(&self) -> Vec<String> {
        self.code_nodes
            .iter()
            .filter(|&&i| self.truth.tree().node(i).is_leaf())
            .map(|&i| self.truth.tree().node(i).id.clone())
            .collect()
    }

    /// A noisy view of the base embedding: optional random orthogonal
    /// transform, Gaussian noise, then row normalization; uncovered codes are
    /// dropped.
    pub fn noisy_source(&self, name: &str, src: &SourceConfig) -> Result<EmbeddingMatrix> {
        if !(0.0..=1.0).contains(&src.coverage) || !(src.noise >= 0.0) {
            return Err(Error::invalid("source coverage must lie in [0, 1] and noise be ≥ 0"));
        }
        let mut rng = substream(self.config.seed, &format!("synth.source.{name}"));
        let d = self.base.dim();
        let x = if src.rotate {
            self.base.rows().dot(&random_orthogonal(d, &mut rng))
        } else {
            self.base.rows().clone()
        };
        let sigma = src.noise / (d as f64).sqrt();
        let noisy = x.mapv(|v| v + sigma * gaussian(&mut rng));
        let keep: Vec<usize> = (0..self.base.len()).filter(|_| rng.random::<f64>() < src.coverage).collect();
        let codes: Vec<String> = keep.iter().map(|&i| self.base.codes()[i].clone()).collect();
        let rows = noisy.select(ndarray::Axis(0), &keep);
        EmbeddingMatrix::normalized(codes, rows)
    }

    /// Patient event stream: each patient has a focal internal node and draws
    /// codes from its subtree, with occasional uniform background codes.
    pub fn events(&self, name: &str, ev: &EventConfig) -> Result<Vec<Event>> {
        if !(0.0..=1.0).contains(&ev.background) || !(0.0..=1.0).contains(&ev.coverage) {
            return Err(Error::invalid("background and coverage must lie in [0, 1]"));
        }
        let mut rng = substream(self.config.seed, &format!("synth.events.{name}"));
        let tree = self.truth.tree();
        let node_code: BTreeMap<usize, &str> = self
            .code_nodes
            .iter()
            .map(|&i| (i, tree.node(i).id.as_str()))
            .collect();
        let covered: Vec<usize> = self
            .code_nodes
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < ev.coverage)
            .collect();
        let covered_set: BTreeSet<usize> = covered.iter().copied().collect();
        if covered.is_empty() {
            return Err(Error::invalid("event coverage left no codes"));
        }
        let focal: Vec<(usize, Vec<usize>)> = (0..tree.len())
            .filter(|&i| !tree.node(i).is_leaf() && i != self.truth.root())
            .map(|i| {
                let mut sub = Vec::new();
                let mut stack = vec![i];
                while let Some(v) = stack.pop() {
                    if covered_set.contains(&v) {
                        sub.push(v);
                    }
                    stack.extend(&tree.node(v).children);
                }
                sub.sort_unstable();
                (i, sub)
            })
            .filter(|(_, sub)| !sub.is_empty())
            .collect();
        if focal.is_empty() {
            return Err(Error::invalid("tree has no internal node below the root"));
        }
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
        let mut events = Vec::with_capacity(ev.patients * ev.events_per_patient);
        for p in 0..ev.patients {
            let (_, pool) = &focal[rng.random_range(0..focal.len())];
            let offset = rng.random_range(0..365u32);
            for _ in 0..ev.events_per_patient {
                let node = if rng.random::<f64>() < ev.background {
                    covered[rng.random_range(0..covered.len())]
                } else {
                    pool[rng.random_range(0..pool.len())]
                };
                let day = offset + rng.random_range(0..=ev.span_days);
                events.push(Event {
                    patient_id: format!("{name}-p{p:05}"),
                    code_id: node_code[&node].to_string(),
                    date: start + chrono::Days::new(day as u64),
                });
            }
        }
        Ok(events)
    }
}

/// Unit-norm rows from the top eigenpairs of the kernel exp(−D / scale).
pub fn kernel_embedding<'a>(
    d: &Array2<f64>,
    dim: usize,
    scale: f64,
    ids: impl Iterator<Item = &'a str>,
) -> Result<EmbeddingMatrix> {
    let n = d.nrows();
    if dim == 0 || dim > n {
        return Err(Error::invalid(format!("embedding dim {dim} must lie in 1..={n}")));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid("kernel scale must be positive"));
    }
    let k = DMatrix::from_fn(n, n, |i, j| (-d[[i, j]] / scale).exp());
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut rows = Array2::zeros((n, dim));
    for (c, &o) in order.iter().take(dim).enumerate() {
        let lam = eig.eigenvalues[o].max(0.0).sqrt();
        let v = eig.eigenvectors.column(o);
        let flip = if v.iter().fold(0.0f64, |m, x| if x.abs() > m.abs() { *x } else { m }) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            rows[[i, c]] = flip * v[i] * lam;
        }
    }
    EmbeddingMatrix::normalized(ids.map(str::to_string).collect(), rows)
}

/// Similar pairs are sibling leaves; related pairs are leaves sharing a
/// grandparent but not a parent. Each relation is shuffled and split evenly
/// into training and test pairs.
fn label_pairs(truth: &GroundTruthTree, code_nodes: &[usize], cfg: &WorldConfig) -> Result<LabeledPairs> {
    let tree = truth.tree();
    let leaves: Vec<usize> = code_nodes.iter().copied().filter(|&i| tree.node(i).is_leaf()).collect();
    let parent = |i: usize| tree.node(i).parent;
    let mut similar = Vec::new();
    let mut related = Vec::new();
    for (a, &x) in leaves.iter().enumerate() {
        for &y in &leaves[a + 1..] {
            if parent(x) == parent(y) {
                similar.push((x, y));
            } else if parent(x).and_then(parent).is_some() && parent(x).and_then(parent) == parent(y).and_then(parent) {
                related.push((x, y));
            }
        }
    }
    let mut rng = substream(cfg.seed, "synth.world.pairs");
    let mut out = Vec::new();
    for (relation, mut list) in [(Relation::Similar, similar), (Relation::Related, related)] {
        list.shuffle(&mut rng);
        let half = list.len() / 2;
        for (k, (x, y)) in list.into_iter().enumerate() {
            let split = if k < half { Split::Train } else { Split::Test };
            let rank = if k < half { k } else { k - half };
            if rank >= cfg.max_pairs_per_relation {
                continue;
            }
            out.push(LabeledPair {
                code_i: tree.node(x).id.clone(),
                code_j: tree.node(y).id.clone(),
                relation,
                split,
            });
        }
    }
    out.sort();
    LabeledPairs::new(out)
}

/// The ground-truth tree with every vocabulary code marked observed, for use
/// as a reference when scoring recovered trees.
pub fn reference_tree(world: &SyntheticWorld) -> crate::treebuild::HierarchyTree {
    let mut t = world.truth.tree().clone();
    for &i in &world.code_nodes {
        t.node_mut(i).kind = NodeKind::Observed;
    }
    t
}
