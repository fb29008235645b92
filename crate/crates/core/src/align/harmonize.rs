//! Aligns every co-occurrence source and the language-model embedding onto a
//! common target space, then aggregates them into one matrix.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, Axis};

use super::network::TransportMap;
use super::ot::{train_ot, OtResult, TransportConfig};
use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};

/// A trained map from one named source into the target space.
#[derive(Debug, Clone)]
pub struct AlignedSource {
    pub name: String,
    pub shared: Vec<String>,
    pub result: OtResult,
}

#[derive(Debug, Clone)]
pub struct Harmonized {
    pub embedding: EmbeddingMatrix,
    pub maps: Vec<AlignedSource>,
}

fn shared_codes(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Vec<String> {
    let bs: BTreeSet<&str> = b.codes().iter().map(String::as_str).collect();
    let mut out: Vec<String> = a.codes().iter().filter(|c| bs.contains(c.as_str())).cloned().collect();
    out.sort();
    out
}

/// Trains a map from `source` to `target` over their shared codes, with the
/// rows of both matrices ordered by code so that π⁰ = (1/m)·I pairs each
/// code with itself.
pub fn align_pair(name: &str, source: &EmbeddingMatrix, target: &EmbeddingMatrix, cfg: &TransportConfig) -> Result<AlignedSource> {
    if source.dim() != target.dim() {
        return Err(Error::invalid(format!(
            "source {name} has dim {} but the target has dim {}",
            source.dim(),
            target.dim()
        )));
    }
    let shared = shared_codes(source, target);
    if shared.len() < 2 {
        return Err(Error::invalid(format!(
            "source {name} shares {} codes with the target; need at least 2",
            shared.len()
        )));
    }
    let es = source.select(&shared)?;
    let et = target.select(&shared)?;
    log::info!("aligning {name}: {} shared codes, dim {}", shared.len(), source.dim());
    let result = train_ot(es.rows(), et.rows(), cfg)?;
    Ok(AlignedSource {
        name: name.to_string(),
        shared,
        result,
    })
}

/// Averages the available aligned rows per code, concatenates the code's
/// language-model row and ℓ2-normalizes.
///
/// `mapped` lists each source with the map applied to it (None for the
/// target itself). Codes present in no source and absent from `coder` are
/// dropped. Codes without a `coder` row get a zero block and a warning; codes
/// present only in `coder` use its mapped row alone when a coder map is given.
pub fn aggregate(
    sources: &[(&EmbeddingMatrix, Option<&TransportMap>)],
    coder: &EmbeddingMatrix,
    coder_map: Option<&TransportMap>,
) -> Result<EmbeddingMatrix> {
    let d = match sources.first() {
        Some((e, _)) => e.dim(),
        None => return Err(Error::invalid("at least one co-occurrence source is required")),
    };
    if sources.iter().any(|(e, _)| e.dim() != d) {
        return Err(Error::invalid("co-occurrence sources must share one dimension"));
    }
    if coder_map.is_some() && coder.dim() != d {
        return Err(Error::invalid(format!(
            "mapped coder rows need dim {d}, got {}",
            coder.dim()
        )));
    }
    let mut inputs: Vec<(&EmbeddingMatrix, Array2<f64>)> = sources
        .iter()
        .map(|(e, m)| (*e, m.map_or_else(|| e.rows().clone(), |t| t.forward(e.rows()))))
        .collect();
    if let Some(t) = coder_map {
        inputs.push((coder, t.forward(coder.rows())));
    }
    let mut codes: BTreeSet<String> = inputs.iter().flat_map(|(e, _)| e.codes().iter().cloned()).collect();
    codes.extend(coder.codes().iter().cloned());

    let dc = coder.dim();
    let mut kept = Vec::with_capacity(codes.len());
    let mut rows: Vec<f64> = Vec::with_capacity(codes.len() * (d + dc));
    let mut missing_coder = 0usize;
    for code in codes {
        let mut acc = Array1::<f64>::zeros(d);
        let mut count = 0usize;
        for (e, y) in &inputs {
            if let Some(i) = e.index_of(&code) {
                acc += &y.row(i);
                count += 1;
            }
        }
        if count == 0 {
            log::warn!("code {code} has no aligned representation; excluded");
            continue;
        }
        acc /= count as f64;
        rows.extend(acc.iter());
        match coder.get(&code) {
            Some(r) => rows.extend(r.iter()),
            None => {
                missing_coder += 1;
                rows.extend(std::iter::repeat_n(0.0, dc));
            }
        }
        kept.push(code);
    }
    if missing_coder > 0 {
        log::warn!("{missing_coder} codes have no language-model row; used a zero block");
    }
    let mat = Array2::from_shape_vec((kept.len(), d + dc), rows).map_err(|e| Error::Internal(e.to_string()))?;
    if let Some(i) = mat.axis_iter(Axis(0)).position(|r| r.dot(&r) == 0.0) {
        return Err(Error::Numerical(format!("aggregated row for {} is zero", kept[i])));
    }
    EmbeddingMatrix::normalized(kept, mat)
}

/// Trains one map per co-occurrence source into `target` and one from
/// `coder` into `target`, then aggregates with [`aggregate`].
pub fn harmonize(
    sources: &[(&str, &EmbeddingMatrix)],
    target: &EmbeddingMatrix,
    coder: &EmbeddingMatrix,
    cfg: &TransportConfig,
) -> Result<Harmonized> {
    let mut maps = Vec::new();
    for (k, (name, e)) in sources.iter().enumerate() {
        let c = TransportConfig {
            seed: cfg.seed.wrapping_add(k as u64 + 1),
            ..cfg.clone()
        };
        maps.push(align_pair(name, e, target, &c)?);
    }
    let coder_cfg = TransportConfig {
        seed: cfg.seed.wrapping_add(sources.len() as u64 + 1),
        ..cfg.clone()
    };
    let coder_aligned = align_pair("coder", coder, target, &coder_cfg)?;
    let mut inputs: Vec<(&EmbeddingMatrix, Option<&TransportMap>)> =
        sources.iter().zip(&maps).map(|((_, e), a)| (*e, Some(&a.result.map))).collect();
    inputs.push((target, None));
    let embedding = aggregate(&inputs, coder, Some(&coder_aligned.result.map))?;
    maps.push(coder_aligned);
    Ok(Harmonized { embedding, maps })
}

/// Splits a harmonized row back into its aggregated and language-model blocks.
pub fn split_blocks(e: &EmbeddingMatrix, d_avg: usize) -> (Array2<f64>, Array2<f64>) {
    let r = e.rows();
    (r.slice(s![.., ..d_avg]).to_owned(), r.slice(s![.., d_avg..]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn mat(codes: &[&str], rows: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::normalized(codes.iter().map(|c| c.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn identity_maps_reduce_to_concatenation() {
        let e = mat(&["a", "b"], array![[1.0, 0.0], [0.6, 0.8]]);
        let coder = mat(&["a", "b"], array![[0.0, 1.0], [1.0, 0.0]]);
        let id = TransportMap::identity(2, &[4]).unwrap();
        let out = aggregate(&[(&e, Some(&id)), (&e, None)], &coder, Some(&id)).unwrap();
        assert_eq!(out.dim(), 4);
        for code in ["a", "b"] {
            let (x, c) = (e.get(code).unwrap(), coder.get(code).unwrap());
            let avg = (&x * 2.0 + &c) / 3.0;
            let w: Vec<f64> = avg.iter().chain(c.iter()).copied().collect();
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let got = out.get(code).unwrap();
            for k in 0..4 {
                assert!((got[k] - w[k] / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_sources_contribute_nothing() {
        let va = mat(&["a"], array![[1.0, 0.0]]);
        let mgb = mat(&["a", "b"], array![[0.0, 1.0], [0.6, 0.8]]);
        let coder = mat(&["a", "c"], array![[1.0], [1.0]]);
        let out = aggregate(&[(&va, None), (&mgb, None)], &coder, None).unwrap();
        assert_eq!(out.codes(), &["a".to_string(), "b".to_string()]);
        let b = out.get("b").unwrap();
        assert!((b[0] - 0.6).abs() < 1e-12 && (b[1] - 0.8).abs() < 1e-12 && b[2] == 0.0);
        let a = out.get("a").unwrap();
        let n = (0.25f64 + 0.25 + 1.0).sqrt();
        assert!((a[0] - 0.5 / n).abs() < 1e-12 && (a[2] - 1.0 / n).abs() < 1e-12);
        assert!(out.max_norm_deviation() < 1e-12);
    }
}
