//! Ranking and partition-agreement metrics.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::substream;

/// Mann-Whitney AUC: P(pos > neg) + ½·P(tie), exact over all comparisons.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ranks = average_ranks(&all.iter().map(|x| x.0).collect::<Vec<_>>());
    let rank_sum: f64 = all.iter().zip(&ranks).filter(|(x, _)| x.1).map(|(_, r)| r).sum();
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Draws `per_positive · |positives|` random pairs over `0..n` that are
/// neither self-pairs nor positives (in either order), without repeats.
pub fn sample_negative_pairs(
    n: usize,
    positives: &[(usize, usize)],
    per_positive: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let pos: BTreeSet<(usize, usize)> = positives.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    let total = n * n.saturating_sub(1) / 2;
    let available = total.saturating_sub(pos.len());
    if available == 0 {
        return Err(Error::invalid("no negative pairs can be drawn"));
    }
    let want = (per_positive * positives.len()).min(available);
    let mut rng = substream(seed, "eval.auc.negatives");
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(want);
    if want * 2 > available {
        let mut pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|p| !pos.contains(p))
            .collect();
        for k in 0..want {
            let r = rng.random_range(k..pool.len());
            pool.swap(k, r);
        }
        pool.truncate(want);
        return Ok(pool);
    }
    while out.len() < want {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if !pos.contains(&key) && chosen.insert(key) {
            out.push(key);
        }
    }
    Ok(out)
}

/// AUC for separating `positives` from seeded random pairs by `score`.
pub fn pair_auc<F>(n: usize, score: F, positives: &[(usize, usize)], negatives_per_positive: usize, seed: u64) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    if positives.is_empty() {
        return Err(Error::invalid("pair_auc needs at least one positive pair"));
    }
    let negs = sample_negative_pairs(n, positives, negatives_per_positive, seed)?;
    let p: Vec<f64> = positives.iter().map(|&(i, j)| score(i, j)).collect();
    let q: Vec<f64> = negs.iter().map(|&(i, j)| score(i, j)).collect();
    Ok(auc(&p, &q))
}

/// 1-based fractional ranks, averaging over ties.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut s = 0;
    while s < order.len() {
        let mut e = s + 1;
        while e < order.len() && x[order[e]] == x[order[s]] {
            e += 1;
        }
        let r = (s + e + 1) as f64 / 2.0;
        for &o in &order[s..e] {
            ranks[o] = r;
        }
        s = e;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

/// Pearson correlation of average ranks; NaN (with a warning) when either
/// list is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::invalid("spearman needs at least 3 values"));
    }
    let r = pearson(&average_ranks(a), &average_ranks(b));
    if r.is_nan() {
        log::warn!("spearman correlation undefined for a constant list");
    }
    Ok(r)
}

/// Predicted and reference labels over the same items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPair {
    pub items: Vec<String>,
    pub predicted: Vec<usize>,
    pub reference: Vec<usize>,
}

impl PartitionPair {
    /// Restricts both maps to their common items (warning when they differ).
    pub fn new(predicted: &BTreeMap<String, String>, reference: &BTreeMap<String, String>) -> Result<Self> {
        let items: Vec<String> = predicted.keys().filter(|k| reference.contains_key(*k)).cloned().collect();
        if items.len() != predicted.len() || items.len() != reference.len() {
            log::warn!(
                "partitions cover different items ({} vs {}); using the {} shared",
                predicted.len(),
                reference.len(),
                items.len()
            );
        }
        if items.is_empty() {
            return Err(Error::invalid("partitions share no items"));
        }
        let encode = |m: &BTreeMap<String, String>| {
            let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
            items
                .iter()
                .map(|it| {
                    let next = ids.len();
                    *ids.entry(m[it].as_str()).or_insert(next)
                })
                .collect::<Vec<_>>()
        };
        Ok(Self {
            predicted: encode(predicted),
            reference: encode(reference),
            items,
        })
    }

    pub fn from_labels(predicted: Vec<usize>, reference: Vec<usize>) -> Result<Self> {
        if predicted.len() != reference.len() {
            return Err(Error::invalid("label vectors differ in length"));
        }
        Ok(Self {
            items: (0..predicted.len()).map(|i| i.to_string()).collect(),
            predicted,
            reference,
        })
    }

    fn contingency(&self) -> (BTreeMap<(usize, usize), f64>, BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
        let mut nij = BTreeMap::new();
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        for (&p, &r) in self.predicted.iter().zip(&self.reference) {
            *nij.entry((p, r)).or_insert(0.0) += 1.0;
            *a.entry(p).or_insert(0.0) += 1.0;
            *b.entry(r).or_insert(0.0) += 1.0;
        }
        (nij, a, b)
    }
}

fn check_items(p: &PartitionPair) -> Result<()> {
    if p.items.len() < 2 {
        return Err(Error::invalid("partition metrics need at least 2 items"));
    }
    Ok(())
}

/// Mutual information over the geometric mean of the entropies; two
/// single-cluster partitions score 1.
pub fn nmi(p: &PartitionPair) -> Result<f64> {
    check_items(p)?;
    let n = p.items.len() as f64;
    let (nij, a, b) = p.contingency();
    let h = |m: &BTreeMap<usize, f64>| -> f64 { m.values().map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (ha, hb) = (h(&a), h(&b));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = nij
        .iter()
        .map(|(&(i, j), &c)| (c / n) * ((c * n) / (a[&i] * b[&j])).ln())
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Adjusted Rand index; when the expected and maximal indices coincide
/// (both partitions trivial) the partitions are scored 1 if identical.
pub fn ari(p: &PartitionPair) -> Result<f64> {
    check_items(p)?;
    let n = p.items.len() as f64;
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let (nij, a, b) = p.contingency();
    let index: f64 = nij.values().map(|&c| c2(c)).sum();
    let sa: f64 = a.values().map(|&c| c2(c)).sum();
    let sb: f64 = b.values().map(|&c| c2(c)).sum();
    let expected = sa * sb / c2(n);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Top `n` codes (excluding the target) by `score(target, other)`, descending,
/// ties broken by code id.
pub fn select_features<F>(codes: &[String], target: &str, n: usize, score: F) -> Result<Vec<(String, f64)>>
where
    F: Fn(usize, usize) -> f64,
{
    let t = codes
        .iter()
        .position(|c| c == target)
        .ok_or_else(|| Error::invalid(format!("target {target:?} not in vocabulary")))?;
    if n > codes.len() - 1 {
        log::warn!("requested {n} features but only {} candidates exist", codes.len() - 1);
    }
    let mut scored: Vec<(String, f64)> = (0..codes.len())
        .filter(|&i| i != t)
        .map(|i| (codes[i].clone(), score(t, i)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_counts_ties_as_half() {
        assert_eq!(auc(&[1.0, 1.0], &[0.0, 0.0]), 1.0);
        assert_eq!(auc(&[1.0], &[1.0]), 0.5);
        // pos {3, 1, 2}, neg {2, 0, 0.5}: wins 3+1+... = 3 + 2 + 2.5 = 7.5 → 7.5/9
        assert!((auc(&[3.0, 1.0, 2.0], &[2.0, 0.0, 0.5]) - 7.5 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_textbook_case() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap().is_nan());
    }

    #[test]
    fn single_cluster_against_singletons_has_zero_ari() {
        let p = PartitionPair::from_labels(vec![0; 5], (0..5).collect()).unwrap();
        assert_eq!(ari(&p).unwrap(), 0.0);
        assert_eq!(nmi(&p).unwrap(), 0.0);
    }

    #[test]
    fn features_exclude_target_and_break_ties_by_id() {
        let codes: Vec<String> = ["t", "b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let s = |_: usize, j: usize| if j == 3 { 2.0 } else { 1.0 };
        let top = select_features(&codes, "t", 3, s).unwrap();
        let ids: Vec<&str> = top.iter().map(|x| x.0.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
    }

    #[test]
    fn negatives_avoid_positives() {
        let pos = vec![(0, 1), (2, 3)];
        let negs = sample_negative_pairs(5, &pos, 2, 1).unwrap();
        assert_eq!(negs.len(), 4);
        assert!(negs.iter().all(|&(i, j)| i < j && (i, j) != (0, 1) && (i, j) != (2, 3)));
        assert!(sample_negative_pairs(2, &[(0, 1)], 1, 1).is_err());
    }
}
