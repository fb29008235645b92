//! Block coordinate descent on a neural transport map and a doubly
//! stochastic coupling.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use super::network::{OptimizerKind, Optimizer, TransportMap};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Row and column sums must stay within this distance of 1/m.
pub const MARGINAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// Mapping step size r.
    pub learning_rate: f64,
    /// Coupling step scale ω.
    pub coupling_step: f64,
    /// Weight η of the transport cost term.
    pub ot_weight: f64,
    /// Outer loops M.
    pub outer_loops: usize,
    /// Mapping epochs N1 per outer loop.
    pub mapping_epochs: usize,
    /// Coupling iterations N2 per outer loop.
    pub coupling_iters: usize,
    pub hidden_sizes: Vec<usize>,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo_c: f64,
    pub max_backtracks: usize,
    pub seed: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            coupling_step: 1e-4,
            ot_weight: 1e-5,
            outer_loops: 2,
            mapping_epochs: 1000,
            coupling_iters: 50,
            hidden_sizes: vec![8000, 12000, 8000],
            batch_size: 128,
            optimizer: OptimizerKind::Sgd,
            armijo_c: 1e-4,
            max_backtracks: 30,
            seed: 0,
        }
    }
}

impl TransportConfig {
    /// Small network for tests and desk-scale runs.
    pub fn test_scale() -> Self {
        Self {
            hidden_sizes: vec![64, 96, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("coupling_step", self.coupling_step),
            ("ot_weight", self.ot_weight),
            ("armijo_c", self.armijo_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.coupling_step > 1.0 {
            return Err(Error::invalid("coupling_step must not exceed 1"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden_sizes must be a nonempty list of positive sizes"));
        }
        if self.outer_loops == 0 || self.batch_size == 0 {
            return Err(Error::invalid("outer_loops and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Nonnegative m × m matrix with every row and column summing to 1/m.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pi: Array2<f64>,
}

impl Coupling {
    /// (1/m)·I.
    pub fn identity(m: usize) -> Self {
        Self { pi: Array2::eye(m) / m as f64 }
    }

    /// 1/m² everywhere.
    pub fn uniform(m: usize) -> Self {
        Self {
            pi: Array2::from_elem((m, m), 1.0 / (m * m) as f64),
        }
    }

    pub fn new(pi: Array2<f64>) -> Result<Self> {
        let c = Self { pi };
        c.check()?;
        Ok(c)
    }

    /// (1/m)·P for the permutation sending row i to column `perm[i]`.
    pub fn from_permutation(perm: &[usize]) -> Self {
        let m = perm.len();
        let mut pi = Array2::zeros((m, m));
        for (i, &j) in perm.iter().enumerate() {
            pi[[i, j]] = 1.0 / m as f64;
        }
        Self { pi }
    }

    pub fn size(&self) -> usize {
        self.pi.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.pi
    }

    /// Largest deviation of a row or column sum from 1/m.
    pub fn marginal_error(&self) -> f64 {
        let target = 1.0 / self.size() as f64;
        let rows = self.pi.sum_axis(Axis(1));
        let cols = self.pi.sum_axis(Axis(0));
        rows.iter().chain(cols.iter()).map(|s| (s - target).abs()).fold(0.0, f64::max)
    }

    /// Verifies squareness, nonnegativity and the marginal constraints.
    pub fn check(&self) -> Result<()> {
        let m = self.pi.nrows();
        if m == 0 || self.pi.ncols() != m {
            return Err(Error::Internal(format!("coupling must be square and nonempty, got {:?}", self.pi.dim())));
        }
        if let Some(v) = self.pi.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Internal(format!("coupling has negative or non-finite entry {v}")));
        }
        let err = self.marginal_error();
        if err > MARGINAL_TOL {
            return Err(Error::Internal(format!("coupling marginals off by {err:e}")));
        }
        Ok(())
    }

    /// TSV with a header of target codes and one row per source code.
    pub fn write_tsv<W: Write>(&self, source: &[String], target: &[String], mut w: W) -> Result<()> {
        if source.len() != self.size() || target.len() != self.size() {
            return Err(Error::invalid("code lists do not match the coupling size"));
        }
        writeln!(w, "code_id\t{}", target.join("\t"))?;
        for (code, row) in source.iter().zip(self.pi.axis_iter(Axis(0))) {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{code}\t{}", vals.join("\t"))?;
        }
        Ok(())
    }
}

/// Row i = Σ_j π_ij e_j / Σ_j π_ij.
pub fn barycentric(pi: &Coupling, targets: &Array2<f64>) -> Result<Array2<f64>> {
    if pi.size() != targets.nrows() {
        return Err(Error::invalid(format!(
            "coupling size {} vs {} target rows",
            pi.size(),
            targets.nrows()
        )));
    }
    let sums = pi.pi.sum_axis(Axis(1));
    if let Some(i) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Internal(format!("coupling row {i} sums to zero")));
    }
    let mut b = pi.pi.dot(targets);
    for (mut row, s) in b.axis_iter_mut(Axis(0)).zip(sums.iter()) {
        row /= *s;
    }
    Ok(b)
}

/// C_T(i, j) = ‖y_i − e_j‖² for mapped sources y = T(E_s).
pub fn transport_cost(mapped: &Array2<f64>, targets: &Array2<f64>) -> Array2<f64> {
    let yn: Vec<f64> = mapped.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let tn: Vec<f64> = targets.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let mut c = mapped.dot(&targets.t()) * -2.0;
    for ((i, j), v) in c.indexed_iter_mut() {
        *v = (*v + yn[i] + tn[j]).max(0.0);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub mapping: f64,
    pub ot: f64,
}

fn objective_from_mapped(mapped: &Array2<f64>, pi: &Coupling, targets: &Array2<f64>, eta: f64) -> Result<Objective> {
    let b = barycentric(pi, targets)?;
    let mapping = (mapped - &b).iter().map(|v| v * v).sum::<f64>();
    let c = transport_cost(mapped, targets);
    let ot = eta * (&pi.pi * &c).sum();
    Ok(Objective { total: mapping + ot, mapping, ot })
}

fn check_shapes(map: &TransportMap, pi: &Coupling, src: &Array2<f64>, tgt: &Array2<f64>) -> Result<()> {
    if src.dim() != tgt.dim() || src.nrows() != pi.size() || src.ncols() != map.dim() {
        return Err(Error::invalid(format!(
            "shape mismatch: source {:?}, target {:?}, coupling {}, map dim {}",
            src.dim(),
            tgt.dim(),
            pi.size(),
            map.dim()
        )));
    }
    Ok(())
}

/// ‖T(E_s) − B_π‖²_F + η⟨π, C_T⟩_F.
pub fn ot_objective(map: &TransportMap, pi: &Coupling, src: &Array2<f64>, tgt: &Array2<f64>, eta: f64) -> Result<Objective> {
    check_shapes(map, pi, src, tgt)?;
    objective_from_mapped(&map.forward(src), pi, tgt, eta)
}

/// Runs `epochs` passes of shuffled mini-batch updates on the mapping loss
/// toward the barycentric targets of `pi`. Returns the full mapping loss
/// after each epoch. `stream` names the random substream for shuffling.
pub fn update_mapping(
    map: &mut TransportMap,
    pi: &Coupling,
    src: &Array2<f64>,
    tgt: &Array2<f64>,
    epochs: usize,
    cfg: &TransportConfig,
    stream: &str,
) -> Result<Vec<f64>> {
    check_shapes(map, pi, src, tgt)?;
    let b = barycentric(pi, tgt)?;
    let m = src.nrows();
    let mut rng = substream(cfg.seed, stream);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, map);
    let mut order: Vec<usize> = (0..m).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = src.select(Axis(0), chunk);
            let y = b.select(Axis(0), chunk);
            let (loss, g) = map.sse_grad(&x, &y);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("mapping loss became {loss} in epoch {epoch}")));
            }
            opt.apply(map, &g);
        }
        let full = (map.forward(src) - &b).iter().map(|v| v * v).sum::<f64>();
        if !full.is_finite() {
            return Err(Error::Numerical(format!("mapping loss became {full} after epoch {epoch}")));
        }
        trace.push(full);
    }
    Ok(trace)
}

/// Diagnostics of one coupling iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingStep {
    pub objective_before: f64,
    pub objective_after: f64,
    /// Line-search factor α that was accepted, or None if the step was
    /// skipped.
    pub alpha: Option<f64>,
    /// The linear-oracle vertex as a permutation (row → column).
    pub vertex: Vec<usize>,
}

/// Frank-Wolfe steps on π at fixed T: the linear oracle is an assignment
/// problem on the gradient G = η·C_T + ∇_π l0, and the step ω·α toward the
/// oracle vertex uses Armijo backtracking on the full objective. The
/// coupling is checked for feasibility after every iteration.
pub fn update_coupling(
    map: &TransportMap,
    pi: &mut Coupling,
    src: &Array2<f64>,
    tgt: &Array2<f64>,
    iters: usize,
    cfg: &TransportConfig,
) -> Result<Vec<CouplingStep>> {
    check_shapes(map, pi, src, tgt)?;
    let m = pi.size() as f64;
    let eta = cfg.ot_weight;
    let mapped = map.forward(src);
    let cost = transport_cost(&mapped, tgt);
    let mut steps = Vec::with_capacity(iters);
    for _ in 0..iters {
        let f0 = objective_from_mapped(&mapped, pi, tgt, eta)?;
        // ∇_π ‖Y − mπE_t‖² = −2m (Y − mπE_t) E_tᵀ
        let resid = &mapped - &(pi.pi.dot(tgt) * m);
        let grad = &cost * eta - &(resid.dot(&tgt.t()) * (2.0 * m));
        let perm = hungarian(&grad)?;
        let vertex = Coupling::from_permutation(&perm);
        let dir = &vertex.pi - &pi.pi;
        let slope = (&grad * &dir).sum();
        let mut accepted = None;
        let mut f_new = f0.total;
        if slope < 0.0 {
            let mut alpha = 1.0;
            for _ in 0..=cfg.max_backtracks {
                let t = cfg.coupling_step * alpha;
                let trial = Coupling { pi: &pi.pi + &(&dir * t) };
                let f = objective_from_mapped(&mapped, &trial, tgt, eta)?.total;
                if f <= f0.total + cfg.armijo_c * t * slope {
                    *pi = trial;
                    accepted = Some(alpha);
                    f_new = f;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_none() {
                log::warn!("Armijo search failed after {} backtracks; keeping the coupling", cfg.max_backtracks);
            }
        }
        pi.check()?;
        steps.push(CouplingStep {
            objective_before: f0.total,
            objective_after: f_new,
            alpha: accepted,
            vertex: perm,
        });
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    pub stage: String,
    pub iter: usize,
    pub total: f64,
    pub mapping: f64,
    pub ot: f64,
}

#[derive(Debug, Clone)]
pub struct OtResult {
    pub map: TransportMap,
    pub coupling: Coupling,
    pub trace: Vec<TraceRecord>,
    /// Coupling iterations of every outer loop.
    pub coupling_steps: Vec<CouplingStep>,
}

/// Alternates mapping and coupling updates for `outer_loops` rounds from a
/// randomly initialized map and π⁰ = (1/m)·I. Rows of `src` and `tgt` must
/// refer to the same codes in the same order.
pub fn train_ot(src: &Array2<f64>, tgt: &Array2<f64>, cfg: &TransportConfig) -> Result<OtResult> {
    cfg.validate()?;
    let m = src.nrows();
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 shared rows, got {m}")));
    }
    if src.dim() != tgt.dim() {
        return Err(Error::invalid(format!("source {:?} and target {:?} differ in shape", src.dim(), tgt.dim())));
    }
    let mut rng = substream(cfg.seed, "ot.init");
    let mut map = TransportMap::random(src.ncols(), &cfg.hidden_sizes, &mut rng)?;
    let mut pi = Coupling::identity(m);
    let mut trace = Vec::new();
    let mut coupling_steps = Vec::new();
    let record = |trace: &mut Vec<TraceRecord>, outer, stage: &str, iter, o: Objective| {
        trace.push(TraceRecord {
            outer,
            stage: stage.into(),
            iter,
            total: o.total,
            mapping: o.mapping,
            ot: o.ot,
        });
    };
    record(&mut trace, 0, "init", 0, ot_objective(&map, &pi, src, tgt, cfg.ot_weight)?);
    for outer in 0..cfg.outer_loops {
        let losses = update_mapping(&mut map, &pi, src, tgt, cfg.mapping_epochs, cfg, &format!("ot.batch.{outer}"))?;
        log::info!(
            "outer loop {outer}: mapping loss {:.6e} after {} epochs",
            losses.last().copied().unwrap_or(f64::NAN),
            losses.len()
        );
        record(&mut trace, outer, "mapping", cfg.mapping_epochs, ot_objective(&map, &pi, src, tgt, cfg.ot_weight)?);
        let steps = update_coupling(&map, &mut pi, src, tgt, cfg.coupling_iters, cfg)?;
        record(&mut trace, outer, "coupling", steps.len(), ot_objective(&map, &pi, src, tgt, cfg.ot_weight)?);
        coupling_steps.extend(steps);
    }
    Ok(OtResult {
        map,
        coupling: pi,
        trace,
        coupling_steps,
    })
}

/// Mean ‖T(e_i^s) − e_i^t‖ over index-aligned rows.
pub fn mean_alignment_error(map: &TransportMap, src: &Array2<f64>, tgt: &Array2<f64>) -> f64 {
    let y = map.forward(src);
    let n = y.nrows() as f64;
    (&y - tgt).axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).sum::<f64>() / n
}

/// Fraction of rows whose mapped source has its own target row as the
/// nearest target (Euclidean).
pub fn nearest_neighbor_accuracy(map: &TransportMap, src: &Array2<f64>, tgt: &Array2<f64>) -> f64 {
    let c = transport_cost(&map.forward(src), tgt);
    let hits = c
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(i, row)| {
            let best = row
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .expect("nonempty");
            best == *i
        })
        .count();
    hits as f64 / c.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_coupling_reproduces_targets() {
        let t = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        assert_eq!(barycentric(&Coupling::identity(3), &t).unwrap(), t);
        let u = barycentric(&Coupling::uniform(3), &t).unwrap();
        let mean = t.mean_axis(Axis(0)).unwrap();
        for r in u.axis_iter(Axis(0)) {
            assert!((&r - &mean).iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn identity_map_on_equal_inputs_has_zero_mapping_loss() {
        let e = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let map = TransportMap::identity(2, &[4]).unwrap();
        let o = ot_objective(&map, &Coupling::identity(3), &e, &e, 1e-5).unwrap();
        assert_eq!(o.mapping, 0.0);
        let o2 = ot_objective(&map, &Coupling::uniform(3), &e, &e, 2e-5).unwrap();
        let o1 = ot_objective(&map, &Coupling::uniform(3), &e, &e, 1e-5).unwrap();
        assert!((o2.ot - 2.0 * o1.ot).abs() < 1e-18);
        assert_eq!(o2.mapping, o1.mapping);
    }

    #[test]
    fn infeasible_coupling_is_rejected() {
        assert!(Coupling::new(array![[0.5, 0.0], [0.0, 0.4]]).is_err());
        assert!(Coupling::new(array![[0.6, -0.1], [-0.1, 0.6]]).is_err());
        assert!(Coupling::new(array![[0.25, 0.25], [0.25, 0.25]]).is_ok());
    }

    #[test]
    fn too_few_rows_is_invalid() {
        let e = array![[1.0, 0.0]];
        assert!(train_ot(&e, &e, &TransportConfig::test_scale()).is_err());
    }
}
