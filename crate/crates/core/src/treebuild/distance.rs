use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense symmetric distance matrix over a labelled node set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl DistanceMatrix {
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let n = ids.len();
        if values.dim() != (n, n) {
            return Err(Error::invalid(format!(
                "{n} ids for a {:?} distance matrix",
                values.dim()
            )));
        }
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                let (a, b) = (values[[i, j]], values[[j, i]]);
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::invalid(format!("invalid distance {a} at ({i},{j})")));
                }
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::invalid(format!("asymmetric distances at ({i},{j})")));
                }
            }
        }
        Ok(Self { ids, values })
    }

    /// Builds the matrix from a pairwise function evaluated on `i < j`.
    pub fn from_fn(ids: Vec<String>, f: impl Fn(usize, usize) -> f64 + Sync) -> Result<Self> {
        let n = ids.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| f(i, j)).collect())
            .collect();
        let mut values = Array2::zeros((n, n));
        for (i, row) in rows.into_iter().enumerate() {
            for (k, v) in row.into_iter().enumerate() {
                let j = i + 1 + k;
                values[[i, j]] = v;
                values[[j, i]] = v;
            }
        }
        Self::new(ids, values)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let ids = keep.iter().map(|&i| self.ids[i].clone()).collect();
        let values = Array2::from_shape_fn((keep.len(), keep.len()), |(a, b)| {
            self.values[[keep[a], keep[b]]]
        });
        Self { ids, values }
    }
}

/// Bottom-set criterion: for each pair, the spread (max − min) over third
/// nodes `k` of `d(i,k) − d(j,k)`. Zero exactly for same-bottom-set pairs
/// when distances are path-additive.
pub fn delta_matrix(d: &Array2<f64>) -> Result<Array2<f64>> {
    let n = d.nrows();
    if n < 3 {
        return Err(Error::invalid(format!("delta matrix needs at least 3 nodes, got {n}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for k in 0..n {
                        if k == i || k == j {
                            continue;
                        }
                        let diff = d[[i, k]] - d[[j, k]];
                        lo = lo.min(diff);
                        hi = hi.max(diff);
                    }
                    hi - lo
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn delta_needs_three_nodes() {
        assert!(delta_matrix(&Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn delta_matches_loop_on_four_point_metric() {
        let d = array![
            [0.0, 3.0, 4.0, 6.0],
            [3.0, 0.0, 5.0, 2.0],
            [4.0, 5.0, 0.0, 7.0],
            [6.0, 2.0, 7.0, 0.0]
        ];
        let delta = delta_matrix(&d).unwrap();
        // (0,1): k=2 → -1, k=3 → 4 ; spread 5
        assert_eq!(delta[[0, 1]], 5.0);
        // (2,3): k=0 → -2, k=1 → 3 ; spread 5
        assert_eq!(delta[[2, 3]], 5.0);
        // (0,2): k=1 → -2, k=3 → -1 ; spread 1
        assert_eq!(delta[[0, 2]], 1.0);
        for i in 0..4 {
            assert_eq!(delta[[i, i]], 0.0);
            for j in 0..4 {
                assert_eq!(delta[[i, j]], delta[[j, i]]);
            }
        }
    }

    #[test]
    fn distance_matrix_validation() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(DistanceMatrix::new(ids.clone(), array![[0.0, 1.0], [1.0, 0.0]]).is_ok());
        assert!(DistanceMatrix::new(ids.clone(), array![[0.0, 1.0], [2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(ids.clone(), array![[1.0, 1.0], [1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(ids, array![[0.0, -1.0], [-1.0, 0.0]]).is_err());
    }
}
