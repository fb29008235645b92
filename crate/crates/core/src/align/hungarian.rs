//! Minimum-cost assignment on a dense square cost matrix.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Returns `col[i]`, the column assigned to row `i`, minimizing the total
/// cost. Runs the O(n³) shortest augmenting path method with row and column
/// potentials.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::invalid(format!("assignment needs a square matrix, got {:?}", cost.dim())));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in assignment cost".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0usize; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    Ok(col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dominant_diagonal_gives_identity() {
        let c = array![[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]];
        assert_eq!(hungarian(&c).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn small_known_instance() {
        let c = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let a = hungarian(&c).unwrap();
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
        assert_eq!(total, 5.0);
    }
}
