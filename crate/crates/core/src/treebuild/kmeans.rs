//! k-means with silhouette model selection, used to turn the bottom-set
//! criterion matrix into a partition.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Largest k tried; `None` means `|V| - 1`.
    pub k_max: Option<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_max: None,
            restarts: 10,
            max_iter: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Deterministic farthest-first seeding: the point farthest from the mean,
/// then repeatedly the point farthest from all chosen centers.
fn farthest_first(x: &Array2<f64>, k: usize) -> Vec<usize> {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let first = (0..n)
        .max_by(|&a, &b| {
            sq_dist(x.row(a), mean.view())
                .total_cmp(&sq_dist(x.row(b), mean.view()))
                .then(b.cmp(&a))
        })
        .expect("nonempty");
    let mut chosen = vec![first];
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    while chosen.len() < k {
        let next = (0..n)
            .max_by(|&a, &b| best[a].total_cmp(&best[b]).then(b.cmp(&a)))
            .expect("nonempty");
        chosen.push(next);
        for i in 0..n {
            best[i] = best[i].min(sq_dist(x.row(i), x.row(next)));
        }
    }
    chosen
}

fn plus_plus(x: &Array2<f64>, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        chosen.push(next);
        for i in 0..n {
            best[i] = best[i].min(sq_dist(x.row(i), x.row(next)));
        }
    }
    chosen
}

fn lloyd(x: &Array2<f64>, init: &[usize], max_iter: usize) -> KMeansFit {
    let n = x.nrows();
    let k = init.len();
    let mut centers = x.select(Axis(0), init);
    let xnorm: Array1<f64> = x.map_axis(Axis(1), |r| r.dot(&r));
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let dots = x.dot(&centers.t());
        let cnorm: Array1<f64> = centers.map_axis(Axis(1), |r| r.dot(&r));
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = xnorm[i] + cnorm[c] - 2.0 * dots[[i, c]];
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        // reseed empty clusters with the point worst served by its center
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let worst = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(x.row(a), centers.row(labels[a]))
                            .total_cmp(&sq_dist(x.row(b), centers.row(labels[b])))
                            .then(b.cmp(&a))
                    })
                    .expect("some cluster has two members");
                counts[labels[worst]] -= 1;
                labels[worst] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += &x.row(i);
        }
        for c in 0..k {
            let mut row = sums.row_mut(c);
            row /= counts[c] as f64;
        }
        centers = sums;
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), centers.row(labels[i]))).sum();
    KMeansFit { labels, inertia }
}

/// Best of `restarts` Lloyd runs: the first seeded farthest-first, the rest
/// k-means++ from `rng`.
pub fn kmeans(x: &Array2<f64>, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KMeansFit> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} out of range for {n} points")));
    }
    let inits: Vec<Vec<usize>> = {
        let mut rng = substream(seed, &format!("tree.kmeans.k{k}"));
        let mut v = vec![farthest_first(x, k)];
        for _ in 1..restarts.max(1) {
            v.push(plus_plus(x, k, &mut rng));
        }
        v
    };
    let fits: Vec<KMeansFit> = inits.par_iter().map(|init| lloyd(x, init, max_iter)).collect();
    Ok(fits
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart"))
}

/// Pairwise Euclidean distances between rows.
pub fn row_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(x.row(i), x.row(j)).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Mean silhouette score; members of singleton clusters score 0.
pub fn silhouette(dist: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist[[i, j]];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Relabels clusters 0,1,2,... in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Partitions nodes into candidate bottom sets from the rows of the criterion
/// matrix.
///
/// If some k admits an exact fit (within-cluster sum of squares vanishing
/// relative to the total), the smallest such k wins: rows of a bottom set
/// coincide exactly under additive distances. Otherwise k = 2..k_max is
/// scanned and the k with the highest mean silhouette is kept, preferring the
/// smaller k on ties. All-equal rows yield a single cluster.
pub fn cluster_bottom_sets(delta: &Array2<f64>, cfg: &ClusterConfig) -> Result<Vec<usize>> {
    let n = delta.nrows();
    if n < 3 || delta.ncols() != n {
        return Err(Error::invalid(format!("need a square matrix over at least 3 nodes, got {:?}", delta.dim())));
    }
    let scale = delta.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mean = delta.mean_axis(Axis(0)).expect("nonempty");
    let total: f64 = (0..n).map(|i| sq_dist(delta.row(i), mean.view())).sum();
    let exact_tol = 1e-12 * total;
    if scale == 0.0 || total <= (1e-12 * scale).powi(2) * n as f64 {
        log::warn!("bottom-set criterion rows are all equal; using a single cluster");
        return Ok(vec![0; n]);
    }

    // Distinct-row classes: when rows repeat, try that k first.
    let tol = 1e-9 * scale;
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..n {
        if !reps
            .iter()
            .any(|&r| delta.row(r).iter().zip(delta.row(i).iter()).all(|(a, b)| (a - b).abs() <= tol))
        {
            reps.push(i);
        }
    }
    let distinct = reps.len();
    if distinct >= 2 && distinct < n {
        let fit = lloyd(delta, &farthest_first(delta, distinct), cfg.max_iter);
        if fit.inertia <= exact_tol {
            return Ok(canonical_labels(&fit.labels));
        }
    }

    let k_hi = cfg.k_max.unwrap_or(n - 1).min(n - 1);
    if k_hi < 2 {
        return Err(Error::invalid(format!("k_max {:?} leaves no k to try", cfg.k_max)));
    }
    let dist = row_distances(delta);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for k in 2..=k_hi {
        let fit = kmeans(delta, k, cfg.restarts, cfg.max_iter, cfg.seed)?;
        if fit.inertia <= exact_tol {
            return Ok(canonical_labels(&fit.labels));
        }
        let s = silhouette(&dist, &fit.labels);
        if best.as_ref().is_none_or(|(bs, _)| s > *bs + 1e-12) {
            best = Some((s, fit.labels));
        }
    }
    let (_, labels) = best.expect("k range nonempty");
    Ok(canonical_labels(&labels))
}
