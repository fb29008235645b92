//! Label-guided corruption of a correlation matrix.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Fraction of positive pairs whose entry is lowered.
    pub neg_frac: f64,
    /// Fraction of negative pairs whose entry is raised.
    pub pos_frac: f64,
    pub neg_shift: f64,
    pub pos_shift: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            neg_frac: 0.1,
            pos_frac: 0.2,
            neg_shift: 0.1,
            pos_shift: 0.2,
            seed: 10,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("neg_frac", self.neg_frac), ("pos_frac", self.pos_frac)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        for (name, s) in [("neg_shift", self.neg_shift), ("pos_shift", self.pos_shift)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("{name} must be ≥ 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub matrix: Array2<f64>,
    /// Positive pairs whose entry was lowered.
    pub lowered: Vec<(usize, usize)>,
    /// Negative pairs whose entry was raised.
    pub raised: Vec<(usize, usize)>,
}

/// ⌊frac · n⌋ with a small guard against products such as 0.1 · 30 landing
/// just below an integer.
fn selection_size(frac: f64, n: usize) -> usize {
    ((frac * n as f64) + 1e-9).floor() as usize
}

fn pick(pairs: &[(usize, usize)], count: usize, seed: u64, name: &str) -> Vec<(usize, usize)> {
    let mut rng = substream(seed, name);
    let mut idx = sample(&mut rng, pairs.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pairs[i]).collect()
}

/// Lowers the entries of a seeded subset of the positive pairs by
/// `neg_shift` (floored at 0) and raises a subset of the negative pairs by
/// `pos_shift` (capped at 1), symmetrically.
pub fn perturb_correlation(
    m: &Array2<f64>,
    pos_pairs: &[(usize, usize)],
    neg_pairs: &[(usize, usize)],
    cfg: &PerturbationConfig,
) -> Result<Perturbation> {
    cfg.validate()?;
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::invalid("matrix must be square"));
    }
    for i in 0..n {
        for j in 0..n {
            let v = m[[i, j]];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("entry ({i}, {j}) = {v} outside [0, 1]")));
            }
            if v != m[[j, i]] {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    for &(i, j) in pos_pairs.iter().chain(neg_pairs) {
        if i >= n || j >= n {
            return Err(Error::invalid(format!("pair ({i}, {j}) out of range for n = {n}")));
        }
    }
    let dedup = |p: &[(usize, usize)]| -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = p.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        set.into_iter().collect()
    };
    let pos = dedup(pos_pairs);
    let neg = dedup(neg_pairs);
    let lowered = pick(&pos, selection_size(cfg.neg_frac, pos.len()), cfg.seed, "synth.perturb.lower");
    let raised = pick(&neg, selection_size(cfg.pos_frac, neg.len()), cfg.seed, "synth.perturb.raise");
    let mut out = m.clone();
    for &(i, j) in &lowered {
        let v = (out[[i, j]] - cfg.neg_shift).max(0.0);
        out[[i, j]] = v;
        out[[j, i]] = v;
    }
    for &(i, j) in &raised {
        let v = (out[[i, j]] + cfg.pos_shift).min(1.0);
        out[[i, j]] = v;
        out[[j, i]] = v;
    }
    Ok(Perturbation {
        matrix: out,
        lowered,
        raised,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.3 + 0.01 * ((i + j) % 20) as f64 })
    }

    fn all_pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
    }

    #[test]
    fn zero_fractions_leave_matrix_unchanged() {
        let m = fixture(6);
        let pairs = all_pairs(6);
        let cfg = PerturbationConfig { neg_frac: 0.0, pos_frac: 0.0, ..Default::default() };
        let p = perturb_correlation(&m, &pairs[..5], &pairs[5..], &cfg).unwrap();
        assert_eq!(p.matrix, m);
    }

    #[test]
    fn lowering_clamps_at_zero() {
        let mut m = fixture(3);
        m[[0, 1]] = 0.05;
        m[[1, 0]] = 0.05;
        let cfg = PerturbationConfig { neg_frac: 1.0, pos_frac: 0.0, ..Default::default() };
        let p = perturb_correlation(&m, &[(0, 1)], &[], &cfg).unwrap();
        assert_eq!(p.matrix[[0, 1]], 0.0);
        assert_eq!(p.matrix[[1, 0]], 0.0);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut m = fixture(3);
        m[[0, 1]] = 0.9;
        assert!(perturb_correlation(&m, &[], &[], &PerturbationConfig::default()).is_err());
        let mut m = fixture(3);
        m[[0, 0]] = 1.5;
        assert!(perturb_correlation(&m, &[], &[], &PerturbationConfig::default()).is_err());
    }

    #[test]
    fn selection_sizes_follow_floor_rule() {
        let m = fixture(12);
        let pairs = all_pairs(12);
        let (pos, neg) = pairs.split_at(30);
        let p = perturb_correlation(&m, pos, neg, &PerturbationConfig::default()).unwrap();
        assert_eq!((p.lowered.len(), p.raised.len()), (3, 7));
        let changed = pairs.iter().filter(|&&(i, j)| p.matrix[[i, j]] != m[[i, j]]).count();
        assert_eq!(changed, 10);
    }
}
