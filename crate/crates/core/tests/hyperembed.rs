//! Hyperboloid geometry, loss values against loop oracles and short
//! training runs.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use mash_core::hyperembed::{
    additivity_loss, additivity_loss_grad, contrastive_loss, contrastive_loss_grad, info_loss_grad, lift,
    lorentz_distance_rows, lorentz_inner, lorentz_inner_rows, project_tangent, reproject, train_hyperbolic,
    HypTrainConfig, LorentzEmbedding, SupervisionSets,
};
use mash_core::rng::{seeded, Rng};
use mash_core::EmbeddingMatrix;

/// Rows (√(1+|x|²), x) for Gaussian x, which lie on the hyperboloid.
fn hyperboloid(n: usize, d: usize, scale: f64, rng: &mut Rng) -> Array2<f64> {
    let mut z = Array2::zeros((n, d + 1));
    for i in 0..n {
        for k in 1..=d {
            let x: f64 = StandardNormal.sample(rng);
            z[[i, k]] = scale * x;
        }
        reproject(z.row_mut(i));
    }
    z
}

fn unit_rows(n: usize, d: usize, rng: &mut Rng) -> EmbeddingMatrix {
    let rows = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng));
    EmbeddingMatrix::normalized((0..n).map(|i| format!("c{i}")).collect(), rows).unwrap()
}

fn embedding(z: Array2<f64>) -> LorentzEmbedding {
    LorentzEmbedding::new((0..z.nrows()).map(|i| format!("c{i}")).collect(), z).unwrap()
}

/// Loop evaluation of (1/n) Σ_{i,j} (⟨z_i, z_j⟩_L − I_ij)².
fn info_oracle(z: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let n = z.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += (lorentz_inner_rows(z.row(i), z.row(j)) - targets[[i, j]]).powi(2);
        }
    }
    s / n as f64
}

fn permute(z: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(z.raw_dim(), |(i, k)| z[[perm[i], k]])
}

#[test]
fn additivity_loss_matches_loop() {
    let mut rng = seeded(2);
    let z = hyperboloid(7, 3, 0.8, &mut rng);
    let triples = vec![(0, 1, 2), (3, 4, 5), (6, 0, 3), (1, 5, 2)];
    let d = |a: usize, b: usize| lorentz_distance_rows(z.row(a), z.row(b));
    let want = triples.iter().map(|&(i, j, k)| (d(j, k) - d(i, k) - d(i, j)).powi(2)).sum::<f64>() / 4.0;
    assert!((additivity_loss(&embedding(z.clone()), &triples) - want).abs() < 1e-12);
    assert_eq!(additivity_loss_grad(&z, &[]).0, 0.0);
}

#[test]
fn info_loss_matches_perturbation_oracle() {
    let mut rng = seeded(3);
    let z = hyperboloid(6, 3, 0.7, &mut rng);
    let targets = {
        let mut t = Array2::zeros((6, 6));
        for i in 0..6 {
            for j in 0..6 {
                t[[i, j]] = lorentz_inner_rows(z.row(i), z.row(j));
            }
        }
        t
    };
    assert!(info_loss_grad(&z, &targets).0.abs() < 1e-20);
    let mut moved = z.clone();
    moved[[2, 1]] += 0.3;
    moved[[4, 3]] -= 0.2;
    reproject(moved.row_mut(2));
    reproject(moved.row_mut(4));
    let got = info_loss_grad(&moved, &targets).0;
    assert!(got > 0.0);
    assert!((got - info_oracle(&moved, &targets)).abs() < 1e-12);

    let perm = [3, 0, 5, 1, 4, 2];
    let pt = Array2::from_shape_fn((6, 6), |(i, j)| targets[[perm[i], perm[j]]]);
    assert!((info_loss_grad(&permute(&moved, &perm), &pt).0 - got).abs() < 1e-12);
}

#[test]
fn contrastive_loss_is_relabel_invariant_and_deterministic() {
    let mut rng = seeded(4);
    let z = hyperboloid(8, 3, 0.9, &mut rng);
    let positives = vec![(0, 1), (2, 3), (4, 5)];
    let negs: BTreeMap<usize, Vec<usize>> = [(0, vec![6, 7]), (2, vec![0, 7]), (4, vec![1, 6])].into_iter().collect();
    let base = contrastive_loss_grad(&z, &positives, &negs).0;

    let perm: Vec<usize> = vec![7, 6, 5, 4, 3, 2, 1, 0];
    let inv = |i: usize| perm.iter().position(|&p| p == i).unwrap();
    let pz = permute(&z, &perm);
    let pp: Vec<(usize, usize)> = positives.iter().map(|&(a, b)| (inv(a), inv(b))).collect();
    let pn: BTreeMap<usize, Vec<usize>> =
        negs.iter().map(|(a, v)| (inv(*a), v.iter().map(|&k| inv(k)).collect())).collect();
    assert!((contrastive_loss_grad(&pz, &pp, &pn).0 - base).abs() < 1e-12);

    let e = embedding(z);
    assert_eq!(contrastive_loss(&e, &positives, 2, 9), contrastive_loss(&e, &positives, 2, 9));
}

#[test]
fn contrastive_loss_falls_as_a_positive_pair_closes() {
    let mut rng = seeded(5);
    let mut z = hyperboloid(6, 2, 1.0, &mut rng);
    let positives = vec![(0, 1)];
    let negs: BTreeMap<usize, Vec<usize>> = [(0, vec![2, 3, 4, 5])].into_iter().collect();
    let target = z.row(0).to_owned();
    let mut last = contrastive_loss_grad(&z, &positives, &negs).0;
    for _ in 0..10 {
        // move the partner a tenth of the way toward the anchor in the chart
        let step: Array1<f64> = (&target - &z.row(1)) * 0.1;
        z.row_mut(1).scaled_add(1.0, &step);
        reproject(z.row_mut(1));
        let now = contrastive_loss_grad(&z, &positives, &negs).0;
        assert!(now < last);
        last = now;
    }
}

#[test]
fn zero_epochs_returns_the_lifted_initialization() {
    let mut rng = seeded(6);
    let init = unit_rows(5, 3, &mut rng);
    let sup = SupervisionSets::from_indices(5, vec![(0, 1)], vec![(0, 2)]).unwrap();
    let cfg = HypTrainConfig { epochs: 0, warmup_epochs: 0, negatives: 2, ..Default::default() };
    let out = train_hyperbolic(&init, &sup, &cfg).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.embedding, LorentzEmbedding::lifted(&init).unwrap());
}

#[test]
fn training_is_deterministic() {
    let mut rng = seeded(7);
    let init = unit_rows(10, 3, &mut rng);
    let sup = SupervisionSets::from_indices(10, vec![(0, 1), (2, 3)], vec![(4, 5), (4, 6), (5, 7)]).unwrap();
    let cfg = HypTrainConfig { epochs: 30, warmup_epochs: 5, negatives: 3, seed: 2, ..Default::default() };
    let a = train_hyperbolic(&init, &sup, &cfg).unwrap();
    let b = train_hyperbolic(&init, &sup, &cfg).unwrap();
    assert_eq!(a.embedding, b.embedding);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn riemannian_steps_on_the_information_loss_descend() {
    let mut rng = seeded(8);
    let z0 = hyperboloid(8, 3, 0.6, &mut rng);
    let targets = {
        let t = hyperboloid(8, 3, 0.6, &mut rng);
        Array2::from_shape_fn((8, 8), |(i, j)| lorentz_inner_rows(t.row(i), t.row(j)))
    };
    let mut z = z0;
    let mut last = info_loss_grad(&z, &targets).0;
    for _ in 0..50 {
        let (_, g) = info_loss_grad(&z, &targets);
        for i in 0..z.nrows() {
            let mut gi = g.row(i).to_owned();
            gi[0] = -gi[0];
            let step = project_tangent(z.row(i), gi.view());
            let mut row = z.row_mut(i);
            row.scaled_add(-1e-3, &step);
            reproject(row);
        }
        let now = info_loss_grad(&z, &targets).0;
        assert!(now <= last, "{now} > {last}");
        last = now;
    }
}

#[test]
fn additivity_training_reduces_the_residual() {
    let mut rng = seeded(9);
    let init = unit_rows(12, 4, &mut rng);
    // root 0 with children 1..=3, each holding grandchildren
    let mut edges = vec![(0, 1), (0, 2), (0, 3)];
    for (k, c) in (4..12).enumerate() {
        edges.push((1 + k % 3, c));
    }
    let sup = SupervisionSets::from_indices(12, vec![], edges).unwrap();
    let cfg = HypTrainConfig {
        w_a: 1.0,
        w_e: 0.0,
        w_c: 0.0,
        lr: 0.01,
        epochs: 500,
        warmup_epochs: 0,
        seed: 9,
        ..Default::default()
    };
    let out = train_hyperbolic(&init, &sup, &cfg).unwrap();
    let mean = |s: &[mash_core::hyperembed::EpochLoss]| s.iter().map(|e| e.additivity).sum::<f64>() / s.len() as f64;
    let first = mean(&out.trace[..10]);
    let last = mean(&out.trace[490..]);
    assert!(last <= 0.5 * first, "additivity {first} -> {last}");
}

proptest! {
    #[test]
    fn distance_is_a_metric(seed in any::<u64>(), scale in 0.1f64..2.0) {
        let mut rng = seeded(seed);
        let z = hyperboloid(3, 3, scale, &mut rng);
        let d = |a: usize, b: usize| lorentz_distance_rows(z.row(a), z.row(b));
        prop_assert!(d(0, 0).abs() < 1e-6);
        prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
    }

    #[test]
    fn lifted_points_sit_on_the_hyperboloid(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = seeded(seed);
        let draw = |rng: &mut Rng| {
            let x: Array1<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5 + 1e-3).collect();
            &x / x.dot(&x).sqrt()
        };
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        let (a, b) = (lift(x.view()).unwrap(), lift(y.view()).unwrap());
        prop_assert!((lorentz_inner(&a, &a).unwrap() + 1.0).abs() < 1e-12);
        prop_assert!((lorentz_inner(&a, &b).unwrap() - (-2.0 + x.dot(&y))).abs() < 1e-12);
    }
}
