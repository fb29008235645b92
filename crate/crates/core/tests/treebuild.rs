//! Tree recovery from exact and perturbed distances, checked against the
//! generating trees, a shortest-path oracle and the four-point condition.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;

use mash_core::evalkit::{ari, partition_from_tree, sibling_precision_sensitivity, PartitionMode, PartitionPair};
use mash_core::synth::generate_tree;
use mash_core::rng::substream;
use mash_core::treebuild::{
    build_forest_with, contract_distances, delta_matrix, recursive_grouping, CategoryMap, DistanceMatrix, Group,
    GroupParent, GroupingConfig, HierarchyTree, NodeKind,
};

fn recover(n: usize, seed: u64) -> (mash_core::synth::GroundTruthTree, HierarchyTree) {
    let g = generate_tree(n, 4, (0.5, 1.5), seed).unwrap();
    let d = DistanceMatrix::new(g.leaf_ids(), g.leaf_distances()).unwrap();
    let t = recursive_grouping(&d, None, &GroupingConfig::default()).unwrap();
    (g, t)
}

#[test]
fn exact_distances_recover_the_generating_tree() {
    for seed in 0..6 {
        let (g, t) = recover(30 + 5 * seed as usize, seed);
        let (p, s) = sibling_precision_sensitivity(&t, g.tree());
        assert_eq!((p, s), (1.0, 1.0), "seed {seed}");
        let pp = PartitionPair::new(
            &partition_from_tree(&t, PartitionMode::ParentOfLeaf),
            &partition_from_tree(g.tree(), PartitionMode::ParentOfLeaf),
        )
        .unwrap();
        assert_eq!(ari(&pp).unwrap(), 1.0);
        // the recovered root may be an extra degree-two node: rooting is not
        // identifiable from leaf distances
        let extra = t.len() - g.tree().len();
        assert!(extra <= 1, "seed {seed}: {} vs {} nodes", t.len(), g.tree().len());
        // re-accumulated path lengths reproduce the leaf distances
        let ids = g.leaf_ids();
        let dm = g.leaf_distances();
        for a in 0..ids.len() {
            for b in 0..ids.len() {
                let (ia, ib) = (t.index_of(&ids[a]).unwrap(), t.index_of(&ids[b]).unwrap());
                let pl = t.path_length(ia, ib).unwrap();
                assert!((pl - dm[[a, b]]).abs() < 1e-6, "seed {seed}: {pl} vs {}", dm[[a, b]]);
            }
        }
    }
}

#[test]
fn contraction_matches_true_internal_distances() {
    let g = generate_tree(20, 3, (0.5, 1.5), 11).unwrap();
    let tree = g.tree();
    let leaves = g.leaves().to_vec();
    let d = g.leaf_distances();
    // group leaves by their true parent
    let mut parents: Vec<usize> = leaves.iter().map(|&l| tree.node(l).parent.unwrap()).collect();
    parents.sort_unstable();
    parents.dedup();
    let groups: Vec<Group> = parents
        .iter()
        .map(|&p| {
            let members: Vec<usize> = (0..leaves.len()).filter(|&k| tree.node(leaves[k]).parent == Some(p)).collect();
            let parent = if members.len() == 1 { GroupParent::PassThrough } else { GroupParent::Latent };
            Group { members, parent }
        })
        .collect();
    let c = contract_distances(&d, &groups);
    for g_ in &groups {
        if g_.members.len() > 1 {
            for &u in &g_.members {
                let w = tree.node(leaves[u]).edge_weight.unwrap();
                assert!((c.edge_lengths[u] - w).abs() < 1e-9);
            }
        }
    }
    let reps: Vec<usize> = groups
        .iter()
        .map(|g_| if g_.members.len() == 1 { leaves[g_.members[0]] } else { tree.node(leaves[g_.members[0]]).parent.unwrap() })
        .collect();
    let want = g.distances_among(&reps);
    for a in 0..reps.len() {
        for b in 0..reps.len() {
            assert!((c.distances[[a, b]] - want[[a, b]]).abs() < 1e-9);
        }
    }
}

#[test]
fn delta_vanishes_exactly_on_bottom_set_pairs() {
    for seed in 0..40 {
        let n = 3 + (seed as usize % 6);
        let g = generate_tree(n, 3, (0.5, 1.5), seed).unwrap();
        let tree = g.tree();
        let d = g.leaf_distances();
        let delta = delta_matrix(&d).unwrap();
        let leaves = g.leaves();
        for a in 0..leaves.len() {
            for b in 0..leaves.len() {
                let same = tree.node(leaves[a]).parent == tree.node(leaves[b]).parent;
                if same {
                    assert!(delta[[a, b]].abs() < 1e-12, "seed {seed}");
                } else {
                    assert!(delta[[a, b]] > 1e-9, "seed {seed}");
                }
            }
        }
    }
}

/// Single-source shortest paths over the undirected weighted tree edges.
fn dijkstra(t: &HierarchyTree, src: usize) -> Vec<f64> {
    let n = t.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        if let Some(p) = t.node(i).parent {
            let w = t.node(i).edge_weight.unwrap();
            adj[i].push((p, w));
            adj[p].push((i, w));
        }
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[src] = 0.0;
    for _ in 0..n {
        let u = (0..n).filter(|&v| !done[v]).min_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
        done[u] = true;
        for &(v, w) in &adj[u] {
            dist[v] = dist[v].min(dist[u] + w);
        }
    }
    dist
}

#[test]
fn path_lengths_match_shortest_paths() {
    for seed in 0..5 {
        let (_, t) = recover(25, 100 + seed);
        for a in (0..t.len()).step_by(3) {
            let oracle = dijkstra(&t, a);
            for (b, &want) in oracle.iter().enumerate() {
                let got = t.path_length(a, b).unwrap();
                assert!((got - want).abs() < 1e-9, "seed {seed}: ({a},{b}) {got} vs {want}");
            }
        }
    }
}

fn four_point_violation(d: &Array2<f64>) -> f64 {
    let n = d.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                for l in (k + 1)..n {
                    let mut s = [d[[i, j]] + d[[k, l]], d[[i, k]] + d[[j, l]], d[[i, l]] + d[[j, k]]];
                    s.sort_by(f64::total_cmp);
                    worst = worst.max(s[2] - s[1]);
                }
            }
        }
    }
    worst
}

fn noisy(d: &Array2<f64>, seed: u64, eps: f64) -> Array2<f64> {
    let mut rng = substream(seed, "noise");
    let mut out = d.clone();
    let n = d.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let f: f64 = rng.random_range(1.0 - eps..1.0 + eps);
            out[[i, j]] *= f;
            out[[j, i]] *= f;
        }
    }
    out
}

fn recovered_leaf_distances(t: &HierarchyTree, ids: &[String]) -> Array2<f64> {
    let idx: Vec<usize> = ids.iter().map(|id| t.index_of(id).unwrap()).collect();
    Array2::from_shape_fn((ids.len(), ids.len()), |(a, b)| t.path_length(idx[a], idx[b]).unwrap())
}

#[test]
fn recovered_trees_satisfy_the_four_point_condition() {
    for seed in 0..4 {
        let g = generate_tree(16, 3, (0.5, 1.5), 300 + seed).unwrap();
        assert!(four_point_violation(&g.leaf_distances()) < 1e-9);
        let d = DistanceMatrix::new(g.leaf_ids(), noisy(&g.leaf_distances(), seed, 0.05)).unwrap();
        let t = recursive_grouping(&d, None, &GroupingConfig::default()).unwrap();
        let v = four_point_violation(&recovered_leaf_distances(&t, &g.leaf_ids()));
        assert!(v < 1e-9, "seed {seed}: violation {v}");
    }
}

fn leaf_partition(t: &HierarchyTree) -> BTreeSet<BTreeSet<String>> {
    let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for n in t.nodes().iter().filter(|n| n.kind == NodeKind::Observed && n.is_leaf()) {
        groups.entry(n.parent.unwrap()).or_default().insert(n.id.clone());
    }
    groups.into_values().collect()
}

#[test]
fn recovery_is_equivariant_under_leaf_permutation() {
    for seed in 0..4 {
        let g = generate_tree(24, 4, (0.5, 1.5), 400 + seed).unwrap();
        let ids = g.leaf_ids();
        let d = g.leaf_distances();
        let n = ids.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.rotate_left(seed as usize + 1);
        let pids: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let pd = Array2::from_shape_fn((n, n), |(a, b)| d[[perm[a], perm[b]]]);
        let cfg = GroupingConfig::default();
        let t1 = recursive_grouping(&DistanceMatrix::new(ids.clone(), d).unwrap(), None, &cfg).unwrap();
        let t2 = recursive_grouping(&DistanceMatrix::new(pids, pd).unwrap(), None, &cfg).unwrap();
        assert_eq!(leaf_partition(&t1), leaf_partition(&t2), "seed {seed}");
        let (a, b) = (recovered_leaf_distances(&t1, &ids), recovered_leaf_distances(&t2, &ids));
        assert!((a - b).iter().all(|v| v.abs() < 1e-9), "seed {seed}");
    }
}

#[test]
fn forest_keeps_categories_apart() {
    let ga = generate_tree(12, 3, (0.5, 1.5), 21).unwrap();
    let gb = generate_tree(9, 3, (0.5, 1.5), 22).unwrap();
    let mut codes: Vec<String> = ga.leaf_ids().iter().map(|c| format!("a{c}")).collect();
    codes.extend(gb.leaf_ids().iter().map(|c| format!("b{c}")));
    let (da, db) = (ga.leaf_distances(), gb.leaf_distances());
    let na = da.nrows();
    let dist = |i: usize, j: usize| match (i < na, j < na) {
        (true, true) => da[[i, j]],
        (false, false) => db[[i - na, j - na]],
        _ => 100.0,
    };
    let cats = CategoryMap::new(
        codes.iter().map(|c| (c.clone(), if c.starts_with('a') { "alpha" } else { "beta" }.to_string())).collect(),
    );
    let f = build_forest_with(&codes, dist, &cats, None, None, &GroupingConfig::default()).unwrap();
    f.validate().unwrap();
    assert_eq!(f.roots().len(), 1);
    let observed: BTreeSet<&str> = codes.iter().map(String::as_str).collect();
    assert_eq!(f.observed_ids(), observed);
    for c in &codes {
        let mut cur = f.index_of(c).unwrap();
        while f.node(cur).kind != NodeKind::Category {
            cur = f.node(cur).parent.unwrap();
        }
        let want = if c.starts_with('a') { "category:alpha" } else { "category:beta" };
        assert_eq!(f.node(cur).id, want);
    }
    for n in f.nodes().iter().filter(|n| n.kind == NodeKind::Latent) {
        assert!(n.id.starts_with("alpha:") || n.id.starts_with("beta:"), "{}", n.id);
    }
    // each category recovers its generating tree
    for (prefix, g) in [("a", &ga), ("b", &gb)] {
        let truth: BTreeSet<BTreeSet<String>> = leaf_partition(g.tree())
            .into_iter()
            .map(|s| s.into_iter().map(|c| format!("{prefix}{c}")).collect())
            .collect();
        let got: BTreeSet<BTreeSet<String>> =
            leaf_partition(&f).into_iter().filter(|s| s.iter().all(|c| c.starts_with(prefix))).collect();
        assert_eq!(got, truth);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noisy_recovery_is_a_valid_tree(n in 5usize..40, seed in any::<u64>(), eps in 0.0f64..0.2) {
        let g = generate_tree(n, 4, (0.5, 1.5), seed).unwrap();
        let d = DistanceMatrix::new(g.leaf_ids(), noisy(&g.leaf_distances(), seed, eps)).unwrap();
        let t = recursive_grouping(&d, None, &GroupingConfig::default()).unwrap();
        prop_assert!(t.validate().is_ok());
        prop_assert_eq!(t.roots().len(), 1);
        let ids = g.leaf_ids();
        prop_assert_eq!(t.observed_ids(), ids.iter().map(String::as_str).collect::<BTreeSet<_>>());
        for n in t.nodes() {
            if n.parent.is_some() {
                prop_assert!(n.edge_weight.is_some_and(|w| w >= 0.0 && w.is_finite()));
            }
        }
    }
}
