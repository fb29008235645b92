use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::Array2;

use super::{CodeVocabulary, CooccurrenceMatrix, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Sparse symmetric nonnegative matrix; entries stored for `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SppmiMatrix {
    n: usize,
    values: BTreeMap<(usize, usize), f64>,
    pub source: String,
}

impl SppmiMatrix {
    /// Builds from a dense symmetric nonnegative matrix.
    pub fn from_dense(dense: &Array2<f64>, source: impl Into<String>) -> Result<Self> {
        let n = dense.nrows();
        if dense.ncols() != n {
            return Err(Error::invalid("SPPMI matrix must be square"));
        }
        let mut values = BTreeMap::new();
        for i in 0..n {
            for j in i..n {
                let v = dense[[i, j]];
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::invalid(format!("entry ({i},{j}) = {v} is not a finite nonnegative value")));
                }
                if (v - dense[[j, i]]).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i},{j})")));
                }
                if v > 0.0 {
                    values.insert((i, j), v);
                }
            }
        }
        Ok(Self {
            n,
            values,
            source: source.into(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.values.get(&key).copied().unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.n));
        for (&(i, j), &v) in &self.values {
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
        d
    }
}

/// `max{0, log(C(i,j) / (C(i,·) C(j,·)))}`, with the log argument multiplied
/// by the grand total `C(·,·)` when `use_total_factor` is set. Zero counts map
/// to zero.
pub fn sppmi(cooc: &CooccurrenceMatrix, use_total_factor: bool) -> Result<SppmiMatrix> {
    if cooc.nnz() == 0 {
        return Err(Error::invalid("co-occurrence matrix has no nonzero counts"));
    }
    let marg = cooc.marginals();
    let total: f64 = marg.iter().map(|&m| m as f64).sum();
    let scale = if use_total_factor { total } else { 1.0 };
    let mut values = BTreeMap::new();
    for (i, j, c) in cooc.iter() {
        let v = (c as f64 * scale / (marg[i] as f64 * marg[j] as f64)).ln();
        if v > 0.0 {
            values.insert((i, j), v);
        }
    }
    Ok(SppmiMatrix {
        n: cooc.size(),
        values,
        source: cooc.source.clone(),
    })
}

/// Top-`dim` symmetric factors `U_d · diag(σ_d)^{1/2}` without row
/// normalization. Singular vector signs are fixed so the largest-magnitude
/// component of each column is positive.
pub fn svd_factors(m: &SppmiMatrix, dim: usize) -> Result<Array2<f64>> {
    let n = m.size();
    if dim == 0 || dim > n {
        return Err(Error::invalid(format!("embedding dim {dim} must be in 1..={n}")));
    }
    let dense = m.to_dense();
    let mat = DMatrix::from_fn(n, n, |i, j| dense[[i, j]]);
    let svd = mat.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not produce left singular vectors".into()))?;
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let rank_tol = sigma.iter().fold(0.0f64, |a, &b| a.max(b)) * n as f64 * f64::EPSILON;
    let kept = order.iter().take(dim).filter(|&&k| sigma[k] > rank_tol).count();
    if kept < dim {
        log::warn!("embedding dim {dim} exceeds numerical rank {kept}");
    }
    let mut out = Array2::zeros((n, dim));
    for (c, &k) in order.iter().take(dim).enumerate() {
        let col = u.column(k);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let s = sigma[k].sqrt();
        for i in 0..n {
            out[[i, c]] = sign * col[i] * s;
        }
    }
    Ok(out)
}

/// SVD embedding with ℓ2 row normalization. Codes whose factor row is zero
/// (no positive SPPMI entries) are dropped with a warning.
pub fn svd_embed(m: &SppmiMatrix, vocab: &CodeVocabulary, dim: usize) -> Result<EmbeddingMatrix> {
    if vocab.len() != m.size() {
        return Err(Error::invalid(format!(
            "vocabulary has {} codes but SPPMI matrix is {}x{}",
            vocab.len(),
            m.size(),
            m.size()
        )));
    }
    let factors = svd_factors(m, dim)?;
    let scale = factors.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let keep: Vec<usize> = (0..m.size())
        .filter(|&i| {
            let r = factors.row(i);
            r.dot(&r).sqrt() > scale * 1e-12
        })
        .collect();
    if keep.len() < m.size() {
        log::warn!(
            "{}: dropped {} codes with empty SPPMI rows",
            m.source,
            m.size() - keep.len()
        );
    }
    let rows = factors.select(ndarray::Axis(0), &keep);
    let codes = keep.iter().map(|&i| vocab.code(i).id.clone()).collect();
    EmbeddingMatrix::normalized(codes, rows)
}
