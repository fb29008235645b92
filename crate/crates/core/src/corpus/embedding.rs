use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Dense row-per-code Euclidean embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    codes: Vec<String>,
    index: BTreeMap<String, usize>,
    rows: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(codes: Vec<String>, rows: Array2<f64>) -> Result<Self> {
        if codes.len() != rows.nrows() {
            return Err(Error::invalid(format!(
                "{} codes for {} embedding rows",
                codes.len(),
                rows.nrows()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, c) in codes.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate code {c:?} in embedding")));
            }
        }
        Ok(Self { codes, index, rows })
    }

    /// Builds the matrix and ℓ2-normalizes every row. Zero rows are an error.
    pub fn normalized(codes: Vec<String>, mut rows: Array2<f64>) -> Result<Self> {
        for (i, mut row) in rows.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "cannot normalize row {i} ({:?}) with norm {norm}",
                    codes.get(i)
                )));
            }
            row.mapv_inplace(|x| x / norm);
        }
        Self::new(codes, rows)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn get(&self, code: &str) -> Option<ArrayView1<'_, f64>> {
        self.index_of(code).map(|i| self.rows.row(i))
    }

    /// Rows for `codes`, in that order.
    pub fn select(&self, codes: &[String]) -> Result<Self> {
        let mut rows = Array2::zeros((codes.len(), self.dim()));
        for (k, c) in codes.iter().enumerate() {
            let r = self
                .get(c)
                .ok_or_else(|| Error::invalid(format!("code {c:?} missing from embedding")))?;
            rows.row_mut(k).assign(&r);
        }
        Self::new(codes.to_vec(), rows)
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.rows
            .axis_iter(Axis(0))
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let a = self.rows.row(i);
        let b = self.rows.row(j);
        let na = a.dot(&a).sqrt();
        let nb = b.dot(&b).sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        a.dot(&b) / (na * nb)
    }

    /// TSV with header `code_id dim_0 ... dim_{d-1}`.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("code_id");
        for k in 0..self.dim() {
            header.push_str(&format!("\tdim_{k}"));
        }
        writeln!(w, "{header}")?;
        for (code, row) in self.codes.iter().zip(self.rows.axis_iter(Axis(0))) {
            let mut line = code.clone();
            for x in row {
                line.push('\t');
                line.push_str(&x.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: Read>(r: R, label: &str) -> Result<Self> {
        let (codes, rows) = read_tsv_table(r, label, "code_id")?;
        Self::new(codes, rows)
    }
}

/// Shared reader for `id<TAB>v0<TAB>v1...` tables with one header line.
pub(crate) fn read_tsv_table<R: Read>(
    r: R,
    label: &str,
    first_col: &str,
) -> Result<(Vec<String>, Array2<f64>)> {
    let mut lines = BufReader::new(r).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::data(label, 1, "empty file")),
    };
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.first().map(|c| c.trim()) != Some(first_col) {
        return Err(Error::data(label, 1, format!("header must start with {first_col}")));
    }
    let dim = cols.len() - 1;
    let mut codes = Vec::new();
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 1 {
            return Err(Error::data(
                label,
                line_no,
                format!("expected {} columns, got {}", dim + 1, fields.len()),
            ));
        }
        codes.push(fields[0].to_string());
        for f in &fields[1..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|e| Error::data(label, line_no, format!("bad value {f:?}: {e}")))?;
            values.push(v);
        }
    }
    let rows = Array2::from_shape_vec((codes.len(), dim), values)
        .map_err(|e| Error::Internal(e.to_string()))?;
    Ok((codes, rows))
}
