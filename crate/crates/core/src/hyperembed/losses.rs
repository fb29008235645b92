//! Training losses on raw hyperboloid coordinates, each paired with its
//! ambient (Euclidean, per coordinate) gradient.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng as _;
use rayon::prelude::*;

use super::lorentz::{lorentz_inner_rows, LorentzEmbedding};
use crate::rng::{substream, Rng};

/// (parent i, child j, non-descendant k).
pub type Triple = (usize, usize, usize);

/// Distance and its ambient gradients with respect to both endpoints.
fn distance_with_grad(a: ArrayView1<f64>, b: ArrayView1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let x = -lorentz_inner_rows(a, b);
    let d = x.max(1.0).acosh();
    let s = x * x - 1.0;
    let scale = if x > 1.0 && s > 1e-12 { 1.0 / s.sqrt() } else { 0.0 };
    // ∂x/∂a = −J b with J = diag(−1, 1, …, 1)
    let mut ga = b.mapv(|v| -v * scale);
    ga[0] = b[0] * scale;
    let mut gb = a.mapv(|v| -v * scale);
    gb[0] = a[0] * scale;
    (d, ga, gb)
}

fn add_row(g: &mut Array2<f64>, i: usize, v: &Array1<f64>, c: f64) {
    g.row_mut(i).scaled_add(c, v);
}

/// Mean squared additivity residual d(j,k) − d(i,k) − d(i,j) over triples.
pub fn additivity_loss(emb: &LorentzEmbedding, triples: &[Triple]) -> f64 {
    if triples.is_empty() {
        log::warn!("additivity loss over an empty triple set is 0");
    }
    additivity_loss_grad(emb.coords(), triples).0
}

pub fn additivity_loss_grad(z: &Array2<f64>, triples: &[Triple]) -> (f64, Array2<f64>) {
    let mut g = Array2::zeros(z.raw_dim());
    if triples.is_empty() {
        return (0.0, g);
    }
    let m = triples.len() as f64;
    let mut loss = 0.0;
    for &(i, j, k) in triples {
        let (djk, gj1, gk1) = distance_with_grad(z.row(j), z.row(k));
        let (dik, gi2, gk2) = distance_with_grad(z.row(i), z.row(k));
        let (dij, gi3, gj3) = distance_with_grad(z.row(i), z.row(j));
        let r = djk - dik - dij;
        loss += r * r;
        let c = 2.0 * r / m;
        add_row(&mut g, j, &gj1, c);
        add_row(&mut g, k, &gk1, c);
        add_row(&mut g, i, &gi2, -c);
        add_row(&mut g, k, &gk2, -c);
        add_row(&mut g, i, &gi3, -c);
        add_row(&mut g, j, &gj3, -c);
    }
    (loss / m, g)
}

/// Symmetric matrix of Lorentzian inner products between all rows.
pub fn init_targets(emb: &LorentzEmbedding) -> Array2<f64> {
    gram(emb.coords())
}

fn gram(z: &Array2<f64>) -> Array2<f64> {
    let mut zj = z.clone();
    zj.column_mut(0).mapv_inplace(|v| -v);
    zj.dot(&z.t())
}

/// (1/n) Σ_{i,j} (⟨z_i, z_j⟩_L − I_ij)².
pub fn info_loss(emb: &LorentzEmbedding, targets: &Array2<f64>) -> f64 {
    info_loss_grad(emb.coords(), targets).0
}

pub fn info_loss_grad(z: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let cols: Vec<usize> = (0..z.nrows()).collect();
    info_loss_grad_sampled(z, targets, &cols)
}

/// Column-sampled estimate of the information loss: the inner sum runs over
/// `cols` only and is rescaled by n / |cols|. With all columns it is exact.
pub fn info_loss_grad_sampled(z: &Array2<f64>, targets: &Array2<f64>, cols: &[usize]) -> (f64, Array2<f64>) {
    let n = z.nrows();
    let scale = n as f64 / cols.len().max(1) as f64;
    let zc = z.select(Axis(0), cols);
    let mut zj = z.clone();
    zj.column_mut(0).mapv_inplace(|v| -v);
    // residuals r_ic = ⟨z_i, z_c⟩_L − I_ic over the sampled columns
    let mut r = zj.dot(&zc.t());
    Zip::from(r.rows_mut()).and(targets.rows()).for_each(|mut row, t| {
        for (c, &col) in cols.iter().enumerate() {
            row[c] -= t[col];
        }
    });
    let loss = r.iter().map(|v| v * v).sum::<f64>() * scale / n as f64;
    // ∂/∂z_i of Σ_{a,b} r_ab² counts both orderings: 4 Σ_j r_ij J z_j
    let mut g = r.dot(&zc) * (4.0 * scale / n as f64);
    g.column_mut(0).mapv_inplace(|v| -v);
    (loss, g)
}

/// Draws up to `k` negatives per anchor: indices other than the anchor that
/// form no positive pair with it, uniformly without replacement.
pub fn sample_negatives(
    n: usize,
    positives: &[(usize, usize)],
    k: usize,
    rng: &mut Rng,
) -> BTreeMap<usize, Vec<usize>> {
    let mut excluded: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(i, j) in positives {
        excluded.entry(i).or_default().insert(j);
        excluded.entry(j).or_default().insert(i);
    }
    let mut out = BTreeMap::new();
    let mut warned = false;
    for &(i, _) in positives {
        if out.contains_key(&i) {
            continue;
        }
        let ex = &excluded[&i];
        let available = n - 1 - ex.iter().filter(|&&e| e != i).count();
        let negs: Vec<usize> = if available <= k {
            if available < k && !warned {
                log::warn!("only {available} negatives available for anchor {i}, wanted {k}");
                warned = true;
            }
            (0..n).filter(|&c| c != i && !ex.contains(&c)).collect()
        } else {
            let mut chosen = BTreeSet::new();
            let mut picks = Vec::with_capacity(k);
            while picks.len() < k {
                let c = rng.random_range(0..n);
                if c != i && !ex.contains(&c) && chosen.insert(c) {
                    picks.push(c);
                }
            }
            picks
        };
        out.insert(i, negs);
    }
    out
}

/// Sampled InfoNCE: mean over positive pairs (i, j) of
/// d(i,j) + log Σ_{k∈Neg(i)} exp(−d(i,k)).
pub fn contrastive_loss(emb: &LorentzEmbedding, positives: &[(usize, usize)], k: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "hyp.negatives");
    let negs = sample_negatives(emb.len(), positives, k, &mut rng);
    contrastive_loss_grad(emb.coords(), positives, &negs).0
}

pub fn contrastive_loss_grad(
    z: &Array2<f64>,
    positives: &[(usize, usize)],
    negatives: &BTreeMap<usize, Vec<usize>>,
) -> (f64, Array2<f64>) {
    let mut g = Array2::zeros(z.raw_dim());
    if positives.is_empty() {
        return (0.0, g);
    }
    let m = positives.len() as f64;
    let per_pair: Vec<(f64, Vec<(usize, Array1<f64>)>)> = positives
        .par_iter()
        .map(|&(i, j)| {
            let mut parts = Vec::new();
            let (dij, gi, gj) = distance_with_grad(z.row(i), z.row(j));
            parts.push((i, gi));
            parts.push((j, gj));
            let negs = negatives.get(&i).map(Vec::as_slice).unwrap_or(&[]);
            if negs.is_empty() {
                return (dij, parts);
            }
            let terms: Vec<(f64, Array1<f64>, Array1<f64>)> =
                negs.iter().map(|&k| distance_with_grad(z.row(i), z.row(k))).collect();
            let mx = terms.iter().map(|t| -t.0).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = terms.iter().map(|t| (-t.0 - mx).exp()).collect();
            let total: f64 = weights.iter().sum();
            let lse = mx + total.ln();
            for ((&k, (_, gik_i, gik_k)), w) in negs.iter().zip(terms).zip(weights) {
                let p = w / total;
                parts.push((i, gik_i * -p));
                parts.push((k, gik_k * -p));
            }
            (dij + lse, parts)
        })
        .collect();
    let mut loss = 0.0;
    for (l, parts) in per_pair {
        loss += l;
        for (row, v) in parts {
            add_row(&mut g, row, &v, 1.0 / m);
        }
    }
    (loss / m, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperembed::lorentz::reproject;
    use ndarray::array;

    fn point(t: f64) -> Array1<f64> {
        array![t.cosh(), t.sinh()]
    }

    #[test]
    fn geodesic_triple_is_additive() {
        // j at −1, i at 0, k at 2 along one geodesic: d_jk = 3 = 2 + 1
        let mut z = Array2::zeros((3, 2));
        z.row_mut(0).assign(&point(0.0));
        z.row_mut(1).assign(&point(-1.0));
        z.row_mut(2).assign(&point(2.0));
        let (l, _) = additivity_loss_grad(&z, &[(0, 1, 2)]);
        assert!(l < 1e-20, "{l}");
    }

    #[test]
    fn contrastive_closed_form() {
        let mut z = Array2::zeros((3, 2));
        z.row_mut(0).assign(&point(0.0));
        z.row_mut(1).assign(&point(0.0));
        z.row_mut(2).assign(&point(10.0));
        let negs = BTreeMap::from([(0, vec![2])]);
        let (l, _) = contrastive_loss_grad(&z, &[(0, 1)], &negs);
        // −log(e^0 / e^{−10}) = −10
        assert!((l + 10.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn negatives_skip_anchor_and_positives() {
        let mut rng = crate::rng::seeded(1);
        let negs = sample_negatives(10, &[(0, 1), (0, 2)], 5, &mut rng);
        let n0 = &negs[&0];
        assert_eq!(n0.len(), 5);
        assert!(n0.iter().all(|&k| k != 0 && k != 1 && k != 2));
        let few = sample_negatives(4, &[(0, 1)], 5, &mut rng);
        assert_eq!(few[&0], vec![2, 3]);
    }

    #[test]
    fn info_loss_is_zero_at_targets() {
        let mut z = array![[0.0, 0.3, -0.2], [0.0, -1.0, 0.5], [0.0, 0.0, 0.0]];
        for r in z.rows_mut() {
            reproject(r);
        }
        let t = gram(&z);
        let (l, g) = info_loss_grad(&z, &t);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }
}
