//! Riemannian gradient training of hyperboloid embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::lorentz::{lorentz_inner_rows, project_tangent, reproject, LorentzEmbedding, RESIDUAL_TOL};
use super::losses::{
    additivity_loss_grad, contrastive_loss_grad, info_loss_grad, info_loss_grad_sampled, init_targets,
    sample_negatives, Triple,
};
use crate::corpus::{EmbeddingMatrix, ParentMap};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// Positive pairs and known parent-child edges, by embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionSets {
    n: usize,
    positive_pairs: Vec<(usize, usize)>,
    parent_edges: Vec<(usize, usize)>,
    /// Subtree (node included) of every child appearing in `parent_edges`.
    subtrees: BTreeMap<usize, BTreeSet<usize>>,
}

impl SupervisionSets {
    /// Validates indices and builds subtree sets; `parent_edges` holds
    /// (parent, child) pairs and must be acyclic with one parent per child.
    pub fn from_indices(
        n: usize,
        positive_pairs: Vec<(usize, usize)>,
        parent_edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        for &(a, b) in positive_pairs.iter().chain(&parent_edges) {
            if a >= n || b >= n || a == b {
                return Err(Error::invalid(format!("bad supervision index pair ({a}, {b}) for n = {n}")));
            }
        }
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut parent_of = BTreeMap::new();
        for &(p, c) in &parent_edges {
            if parent_of.insert(c, p).is_some_and(|q| q != p) {
                return Err(Error::invalid(format!("node {c} has two parents")));
            }
            children.entry(p).or_default().push(c);
        }
        let mut subtrees = BTreeMap::new();
        for &(_, c) in &parent_edges {
            let mut seen = BTreeSet::new();
            let mut stack = vec![c];
            while let Some(x) = stack.pop() {
                if !seen.insert(x) {
                    return Err(Error::invalid("parent edges contain a cycle"));
                }
                if let Some(ch) = children.get(&x) {
                    stack.extend(ch);
                }
            }
            subtrees.insert(c, seen);
        }
        for &(p, c) in &parent_edges {
            if subtrees[&c].contains(&p) {
                return Err(Error::invalid("parent edges contain a cycle"));
            }
        }
        Ok(Self {
            n,
            positive_pairs,
            parent_edges,
            subtrees,
        })
    }

    /// Resolves code-id pairs against `codes`; pairs or edges naming unknown
    /// codes are skipped with a warning.
    pub fn from_codes(codes: &[String], positives: &[(String, String)], hierarchy: Option<&ParentMap>) -> Result<Self> {
        let index: BTreeMap<&str, usize> = codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut skipped = 0usize;
        let mut pos = Vec::new();
        for (a, b) in positives {
            match (index.get(a.as_str()), index.get(b.as_str())) {
                (Some(&i), Some(&j)) if i != j => pos.push((i, j)),
                _ => skipped += 1,
            }
        }
        let mut edges = Vec::new();
        if let Some(h) = hierarchy {
            for (c, p) in h.edges() {
                match (index.get(p), index.get(c)) {
                    (Some(&i), Some(&j)) => edges.push((i, j)),
                    _ => skipped += 1,
                }
            }
        }
        if skipped > 0 {
            log::warn!("{skipped} supervision pairs reference codes outside the embedding and were skipped");
        }
        Self::from_indices(codes.len(), pos, edges)
    }

    pub fn positive_pairs(&self) -> &[(usize, usize)] {
        &self.positive_pairs
    }

    pub fn parent_edges(&self) -> &[(usize, usize)] {
        &self.parent_edges
    }

    /// True when `k` lies in the subtree rooted at `j` (including `j`).
    pub fn in_subtree(&self, j: usize, k: usize) -> bool {
        match self.subtrees.get(&j) {
            Some(s) => s.contains(&k),
            None => j == k,
        }
    }

    /// Draws up to `per_edge` triples (i, j, k) per edge i → j with k
    /// uniform over nodes outside the subtree of j and distinct from i.
    pub fn sample_parent_triples(&self, per_edge: usize, rng: &mut Rng) -> Vec<Triple> {
        let mut out = Vec::with_capacity(per_edge * self.parent_edges.len());
        for &(i, j) in &self.parent_edges {
            let sub = &self.subtrees[&j];
            let available = self.n - sub.len() - 1;
            if available == 0 {
                continue;
            }
            if available <= 4 * per_edge || sub.len() * 2 > self.n {
                let pool: Vec<usize> = (0..self.n).filter(|&k| k != i && !sub.contains(&k)).collect();
                let take = per_edge.min(pool.len());
                for t in sample(rng, pool.len(), take) {
                    out.push((i, j, pool[t]));
                }
            } else {
                let mut chosen = BTreeSet::new();
                while chosen.len() < per_edge {
                    let k = rng.random_range(0..self.n);
                    if k != i && !sub.contains(&k) && chosen.insert(k) {
                        out.push((i, j, k));
                    }
                }
            }
        }
        out
    }

    /// Checks that every triple names an edge and a non-descendant third node.
    pub fn validate_triples(&self, triples: &[Triple]) -> Result<()> {
        let edges: BTreeSet<(usize, usize)> = self.parent_edges.iter().copied().collect();
        for &(i, j, k) in triples {
            if !edges.contains(&(i, j)) {
                return Err(Error::invalid(format!("({i}, {j}) is not a parent edge")));
            }
            if k >= self.n || self.in_subtree(j, k) {
                return Err(Error::invalid(format!("{k} is not a valid non-descendant of {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypTrainConfig {
    pub w_a: f64,
    pub w_e: f64,
    pub w_c: f64,
    pub lr: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Codes allowed to move during warm-up; `None` lets every code move.
    pub warmup_subset: Option<BTreeSet<String>>,
    pub negatives: usize,
    pub triples_per_edge: usize,
    /// Column sample size for the information loss; `None` uses all columns.
    pub info_sample_cols: Option<usize>,
    pub seed: u64,
}

impl Default for HypTrainConfig {
    fn default() -> Self {
        Self {
            w_a: 0.1,
            w_e: 1.0,
            w_c: 0.1,
            lr: 0.01,
            epochs: 1000,
            warmup_epochs: 100,
            warmup_subset: None,
            negatives: 50,
            triples_per_edge: 10,
            info_sample_cols: None,
            seed: 0,
        }
    }
}

impl HypTrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_a", self.w_a), ("w_e", self.w_e), ("w_c", self.w_c)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite value ≥ 0, got {w}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::invalid("warmup_epochs exceeds epochs"));
        }
        if self.negatives == 0 {
            return Err(Error::invalid("negatives must be ≥ 1"));
        }
        if self.info_sample_cols == Some(0) {
            return Err(Error::invalid("info_sample_cols must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub additivity: f64,
    pub info: f64,
    pub contrastive: f64,
    pub total: f64,
    /// Largest |⟨z,z⟩_L + 1| after the epoch's update.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct HypTrainOutput {
    pub embedding: LorentzEmbedding,
    /// Loss terms evaluated at the start of each epoch, with the residual
    /// after its update.
    pub trace: Vec<EpochLoss>,
}

/// Writes the loss trace as TSV with header `epoch L_a L_e L_c total residual`.
pub fn write_training_log<W: Write>(trace: &[EpochLoss], mut w: W) -> Result<()> {
    writeln!(w, "epoch\tL_a\tL_e\tL_c\ttotal\tresidual")?;
    for e in trace {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{:e}",
            e.epoch, e.additivity, e.info, e.contrastive, e.total, e.residual
        )?;
    }
    Ok(())
}

fn check_finite(term: &str, v: f64, epoch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{term} loss is {v} at epoch {epoch}")))
    }
}

/// Lifts `init` onto the hyperboloid and minimizes
/// w_a·L_a + w_e·L_e + w_c·L_c by projected gradient steps with re-projection.
pub fn train_hyperbolic(init: &EmbeddingMatrix, sup: &SupervisionSets, cfg: &HypTrainConfig) -> Result<HypTrainOutput> {
    cfg.validate()?;
    if sup.n != init.len() {
        return Err(Error::invalid(format!(
            "supervision built for {} codes, embedding has {}",
            sup.n,
            init.len()
        )));
    }
    let lifted = LorentzEmbedding::lifted(init)?;
    let n = lifted.len();
    let targets = init_targets(&lifted);
    let mut z = lifted.coords().clone();
    let warm_mask: Option<Vec<bool>> = cfg
        .warmup_subset
        .as_ref()
        .map(|s| lifted.codes().iter().map(|c| s.contains(c)).collect());
    if cfg.w_a > 0.0 && sup.parent_edges.is_empty() {
        log::warn!("additivity weight is set but no parent edges were supplied");
    }
    if cfg.w_c > 0.0 && sup.positive_pairs.is_empty() {
        log::warn!("contrastive weight is set but no positive pairs were supplied");
    }

    let mut triple_rng = substream(cfg.seed, "hyp.triples");
    let mut neg_rng = substream(cfg.seed, "hyp.negatives");
    let mut col_rng = substream(cfg.seed, "hyp.info_cols");
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut grad = Array2::<f64>::zeros(z.raw_dim());
        let mut rec = EpochLoss {
            epoch,
            additivity: 0.0,
            info: 0.0,
            contrastive: 0.0,
            total: 0.0,
            residual: 0.0,
        };
        if cfg.w_a > 0.0 && !sup.parent_edges.is_empty() {
            let triples = sup.sample_parent_triples(cfg.triples_per_edge, &mut triple_rng);
            let (l, g) = additivity_loss_grad(&z, &triples);
            check_finite("additivity", l, epoch)?;
            grad.scaled_add(cfg.w_a, &g);
            rec.additivity = l;
        }
        if cfg.w_e > 0.0 {
            let (l, g) = match cfg.info_sample_cols {
                Some(m) if m < n => {
                    let mut cols = sample(&mut col_rng, n, m).into_vec();
                    cols.sort_unstable();
                    info_loss_grad_sampled(&z, &targets, &cols)
                }
                _ => info_loss_grad(&z, &targets),
            };
            check_finite("information", l, epoch)?;
            grad.scaled_add(cfg.w_e, &g);
            rec.info = l;
        }
        if cfg.w_c > 0.0 && !sup.positive_pairs.is_empty() {
            let negs = sample_negatives(n, &sup.positive_pairs, cfg.negatives, &mut neg_rng);
            let (l, g) = contrastive_loss_grad(&z, &sup.positive_pairs, &negs);
            check_finite("contrastive", l, epoch)?;
            grad.scaled_add(cfg.w_c, &g);
            rec.contrastive = l;
        }
        rec.total = cfg.w_a * rec.additivity + cfg.w_e * rec.info + cfg.w_c * rec.contrastive;

        let in_warmup = epoch < cfg.warmup_epochs;
        for i in 0..n {
            if in_warmup && warm_mask.as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            let mut g = grad.row(i).to_owned();
            g[0] = -g[0];
            let step = project_tangent(z.row(i), g.view());
            let mut row = z.row_mut(i);
            row.scaled_add(-cfg.lr, &step);
            reproject(row);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite coordinates after epoch {epoch}")));
        }
        rec.residual = z
            .axis_iter(Axis(0))
            .map(|r| (lorentz_inner_rows(r, r) + 1.0).abs())
            .fold(0.0, f64::max);
        if rec.residual >= RESIDUAL_TOL {
            return Err(Error::Numerical(format!("hyperboloid residual {:e} after epoch {epoch}", rec.residual)));
        }
        trace.push(rec);
    }
    let embedding = LorentzEmbedding::from_parts_unchecked(lifted.codes().to_vec(), z);
    Ok(HypTrainOutput { embedding, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples_avoid_subtrees() {
        // 0 → 1 → 2, 0 → 3 ; 4, 5 unrelated
        let sup = SupervisionSets::from_indices(6, vec![], vec![(0, 1), (1, 2), (0, 3)]).unwrap();
        let mut rng = crate::rng::seeded(3);
        let t = sup.sample_parent_triples(10, &mut rng);
        sup.validate_triples(&t).unwrap();
        assert!(t.iter().all(|&(i, j, k)| k != i && !sup.in_subtree(j, k)));
        assert!(t.iter().any(|&(_, j, k)| j == 1 && k == 3));
    }

    #[test]
    fn cycles_are_rejected() {
        assert!(SupervisionSets::from_indices(3, vec![], vec![(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn warmup_larger_than_epochs_is_invalid() {
        let cfg = HypTrainConfig { epochs: 5, warmup_epochs: 6, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
