//! The Lorentz (hyperboloid) model of hyperbolic space with curvature −1.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis};

use crate::corpus::embedding::read_tsv_table;
use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Tolerance on |⟨z,z⟩_L + 1| for a point to count as on the hyperboloid.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// −a₀b₀ + Σ_{i≥1} aᵢbᵢ on raw coordinate rows (no dimension check).
pub fn lorentz_inner_rows(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = -a[0] * b[0];
    for i in 1..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Geodesic distance on raw coordinate rows; clamps roundoff below 1.
pub fn lorentz_distance_rows(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    (-lorentz_inner_rows(a, b)).max(1.0).acosh()
}

/// Tangent-space projection of a Minkowski gradient `g` at `z`:
/// g + ⟨z,g⟩_L z.
pub fn project_tangent(z: ArrayView1<f64>, g: ArrayView1<f64>) -> Array1<f64> {
    let c = lorentz_inner_rows(z, g);
    &g + &(&z * c)
}

/// Pulls `z` back onto the upper sheet by resetting the time coordinate.
pub fn reproject(mut z: ArrayViewMut1<f64>) {
    let s: f64 = z.iter().skip(1).map(|x| x * x).sum();
    z[0] = (1.0 + s).sqrt();
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    z: Array1<f64>,
}

impl LorentzPoint {
    pub fn new(z: Array1<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::invalid("a Lorentz point needs at least 2 coordinates"));
        }
        let r = lorentz_inner_rows(z.view(), z.view()) + 1.0;
        if !(r.abs() < RESIDUAL_TOL) || !(z[0] >= 1.0) {
            return Err(Error::invalid(format!(
                "point off the hyperboloid: residual {r:e}, z0 = {}",
                z[0]
            )));
        }
        Ok(Self { z })
    }

    /// Spatial dimension d (the point has d + 1 coordinates).
    pub fn dim(&self) -> usize {
        self.z.len() - 1
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.z.view()
    }
}

pub fn lorentz_inner(a: &LorentzPoint, b: &LorentzPoint) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(lorentz_inner_rows(a.coords(), b.coords()))
}

pub fn lorentz_distance(a: &LorentzPoint, b: &LorentzPoint) -> Result<f64> {
    Ok((-lorentz_inner(a, b)?).max(1.0).acosh())
}

/// Maps a unit vector x to (√2, x), which satisfies ⟨z,z⟩_L = −1.
pub fn lift(x: ArrayView1<f64>) -> Result<LorentzPoint> {
    let norm = x.dot(&x).sqrt();
    if !((norm - 1.0).abs() <= 1e-9) {
        return Err(Error::invalid(format!("lift needs a unit vector, norm is {norm}")));
    }
    let mut z = Array1::zeros(x.len() + 1);
    z[0] = std::f64::consts::SQRT_2;
    z.slice_mut(ndarray::s![1..]).assign(&x);
    LorentzPoint::new(z)
}

/// One hyperboloid point per code, stored as rows of (z₀, …, z_d).
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzEmbedding {
    codes: Vec<String>,
    index: BTreeMap<String, usize>,
    z: Array2<f64>,
}

impl LorentzEmbedding {
    /// Validates every row against the hyperboloid constraint.
    pub fn new(codes: Vec<String>, z: Array2<f64>) -> Result<Self> {
        if codes.len() != z.nrows() {
            return Err(Error::invalid(format!("{} codes for {} rows", codes.len(), z.nrows())));
        }
        if z.ncols() < 2 {
            return Err(Error::invalid("Lorentz rows need at least 2 coordinates"));
        }
        let mut index = BTreeMap::new();
        for (i, c) in codes.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate code {c:?}")));
            }
        }
        let e = Self { codes, index, z };
        for (i, row) in e.z.axis_iter(Axis(0)).enumerate() {
            let r = lorentz_inner_rows(row, row) + 1.0;
            if !(r.abs() < RESIDUAL_TOL) || !(row[0] >= 1.0) {
                return Err(Error::invalid(format!(
                    "row {:?} off the hyperboloid: residual {r:e}, z0 = {}",
                    e.codes[i], row[0]
                )));
            }
        }
        Ok(e)
    }

    /// Lifts every row of a unit-norm Euclidean embedding.
    pub fn lifted(init: &EmbeddingMatrix) -> Result<Self> {
        let n = init.len();
        let d = init.dim();
        let mut z = Array2::zeros((n, d + 1));
        for i in 0..n {
            let p = lift(init.row(i)).map_err(|e| Error::invalid(format!("code {:?}: {e}", init.codes()[i])))?;
            z.row_mut(i).assign(&p.coords());
        }
        Self::new(init.codes().to_vec(), z)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols() - 1
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn point(&self, i: usize) -> LorentzPoint {
        LorentzPoint { z: self.z.row(i).to_owned() }
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        lorentz_distance_rows(self.z.row(i), self.z.row(j))
    }

    /// Largest |⟨z,z⟩_L + 1| over all rows.
    pub fn max_residual(&self) -> f64 {
        self.z
            .axis_iter(Axis(0))
            .map(|r| (lorentz_inner_rows(r, r) + 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// TSV with header `code_id z_0 ... z_d`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("code_id");
        for k in 0..self.z.ncols() {
            header.push_str(&format!("\tz_{k}"));
        }
        writeln!(w, "{header}")?;
        for (code, row) in self.codes.iter().zip(self.z.axis_iter(Axis(0))) {
            let mut line = code.clone();
            for x in row {
                line.push('\t');
                line.push_str(&x.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the TSV written by [`Self::write_tsv`] and re-validates residuals.
    pub fn read_tsv<R: Read>(r: R, label: &str) -> Result<Self> {
        let (codes, z) = read_tsv_table(r, label, "code_id")?;
        Self::new(codes, z).map_err(|e| Error::data(label, 0, e.to_string()))
    }

    pub(crate) fn from_parts_unchecked(codes: Vec<String>, z: Array2<f64>) -> Self {
        let index = codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self { codes, index, z }
    }
}
