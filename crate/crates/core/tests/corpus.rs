//! Co-occurrence counting, parent aggregation, SPPMI and SVD against hand
//! values and brute-force oracles.

use chrono::NaiveDate;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;

use mash_core::corpus::{
    aggregate_parents, build_cooccurrence, read_events, sppmi, svd_embed, svd_factors, CooccurrenceMatrix, Event,
};
use mash_core::rng::seeded;
use mash_core::{CodeVocabulary, ParentMap, SppmiMatrix};

fn vocab(n: usize) -> CodeVocabulary {
    CodeVocabulary::from_ids((0..n).map(|i| format!("k{i}"))).unwrap()
}

fn events(rows: &[(&str, &str, i64)]) -> Vec<Event> {
    let base = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    rows.iter()
        .map(|&(p, c, d)| Event { patient_id: p.into(), code_id: c.into(), date: base + chrono::Duration::days(d) })
        .collect()
}

#[test]
fn three_code_pmi_hand_values() {
    // C(0,1) = 2, C(0,2) = C(1,2) = 1: marginals 3, 3, 2 and total 8
    let evs = events(&[
        ("a", "k0", 0),
        ("a", "k1", 0),
        ("b", "k0", 4),
        ("b", "k1", 4),
        ("c", "k0", 0),
        ("c", "k2", 0),
        ("d", "k1", 0),
        ("d", "k2", 0),
    ]);
    let (c, _) = build_cooccurrence(&vocab(3), &evs, 30, "hand").unwrap();
    assert_eq!((c.get(0, 1), c.get(0, 2), c.get(1, 2)), (2, 1, 1));
    assert_eq!(c.marginals(), vec![3, 3, 2]);
    assert_eq!(c.total(), 8);
    let s = sppmi(&c, true).unwrap();
    assert!((s.get(0, 1) - 0.5753641449035618).abs() < 1e-15);
    assert!((s.get(0, 2) - 0.28768207245178085).abs() < 1e-15);
    assert!((s.get(1, 2) - 0.28768207245178085).abs() < 1e-15);
    assert_eq!(s.get(1, 0), s.get(0, 1));
    for i in 0..3 {
        assert_eq!(s.get(i, i), 0.0);
    }
}

#[test]
fn five_code_three_patient_counts() {
    let evs = events(&[
        ("p1", "k0", 0),
        ("p1", "k1", 3),
        ("p1", "k2", 10),
        ("p1", "k0", 12),
        ("p2", "k3", 0),
        ("p2", "k4", 0),
        ("p2", "k3", 1),
        ("p3", "k1", 5),
        ("p3", "k4", 20),
        ("p3", "k9", 20),
    ]);
    let (c, report) = build_cooccurrence(&vocab(5), &evs, 7, "hand").unwrap();
    let mut want = [[0u64; 5]; 5];
    for (i, j, v) in [(0, 1, 1), (1, 2, 1), (0, 2, 1), (3, 4, 2)] {
        want[i][j] = v;
        want[j][i] = v;
    }
    for (i, row) in want.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(c.get(i, j), v, "({i},{j})");
        }
    }
    assert_eq!(report.events, 10);
    assert_eq!(report.unknown_events, 1);
    assert!(report.unknown_codes.contains("k9"));
}

#[test]
fn events_csv_feeds_the_counter() {
    let text = "patient_id,code_id,date\np,k0,2020-01-01\np,k1,2020-01-31\np,k2,2020-02-01\n";
    let evs = read_events(text.as_bytes(), "events.csv").unwrap();
    let (c, _) = build_cooccurrence(&vocab(3), &evs, 30, "csv").unwrap();
    assert_eq!((c.get(0, 1), c.get(1, 2), c.get(0, 2)), (1, 1, 0));
}

/// Descendant sets (or the code itself for non-parents) and the
/// ancestor/descendant relation, computed by walking the parent map.
fn aggregation_oracle(c: &Array2<u64>, ids: &[String], map: &ParentMap) -> Array2<u64> {
    let n = ids.len();
    let ancestors = |i: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = ids[i].as_str();
        while let Some(p) = map.parent(cur) {
            out.push(ids.iter().position(|x| x == p).unwrap());
            cur = p;
        }
        out
    };
    let desc: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&d| ancestors(d).contains(&i)).collect()).collect();
    let group: Vec<Vec<usize>> = (0..n).map(|i| if desc[i].is_empty() { vec![i] } else { desc[i].clone() }).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j || ancestors(i).contains(&j) || ancestors(j).contains(&i) {
                continue;
            }
            out[[i, j]] = group[i].iter().flat_map(|&a| group[j].iter().map(move |&b| c[[a, b]])).sum();
        }
    }
    out
}

#[test]
fn parent_aggregation_matches_descendant_sums() {
    let v = vocab(10);
    let ids: Vec<String> = v.ids().map(str::to_string).collect();
    // two-level family under k0, one-level under k1, k9 on its own
    let map = ParentMap::from_pairs([
        ("k2", "k0"),
        ("k3", "k0"),
        ("k4", "k2"),
        ("k5", "k2"),
        ("k6", "k3"),
        ("k7", "k1"),
        ("k8", "k1"),
    ])
    .unwrap();
    for seed in 0..5 {
        let mut rng = seeded(seed);
        let mut cooc = CooccurrenceMatrix::zeros(10, 30, "agg");
        let mut dense = Array2::zeros((10, 10));
        for i in 0..10 {
            for j in (i + 1)..10 {
                let x: u64 = rng.random_range(0..5);
                cooc.add(i, j, x);
                dense[[i, j]] = x;
                dense[[j, i]] = x;
            }
        }
        let got = aggregate_parents(&cooc, &v, &map).unwrap();
        let want = aggregation_oracle(&dense, &ids, &map);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(got.get(i, j), want[[i, j]], "seed {seed} ({i},{j})");
            }
        }
    }
}

#[test]
fn rank_two_matrix_is_reconstructed() {
    let mut rng = seeded(12);
    let a = Array2::from_shape_fn((6, 2), |_| rng.random_range(0.1..1.0));
    let m = a.dot(&a.t());
    let s = SppmiMatrix::from_dense(&m, "rank2").unwrap();
    let f = svd_factors(&s, 2).unwrap();
    let err = (f.dot(&f.t()) - &m).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    assert!(err < 1e-8, "reconstruction error {err}");
}

fn random_events(seed: u64, n: usize) -> Vec<Event> {
    let mut rng = seeded(seed);
    let rows: Vec<(String, String, i64)> = (0..150)
        .map(|_| {
            (format!("p{}", rng.random_range(0..6)), format!("k{}", rng.random_range(0..n)), rng.random_range(0..90))
        })
        .collect();
    let base = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    rows.into_iter()
        .map(|(p, c, d)| Event { patient_id: p, code_id: c, date: base + chrono::Duration::days(d) })
        .collect()
}

proptest! {
    #[test]
    fn counts_and_sppmi_are_symmetric(seed in any::<u64>(), window in 1i64..60, use_total in any::<bool>()) {
        let v = vocab(8);
        let (c, _) = build_cooccurrence(&v, &random_events(seed, 8), window, "p").unwrap();
        prop_assume!(c.nnz() > 0);
        let s = sppmi(&c, use_total).unwrap();
        for i in 0..8 {
            prop_assert_eq!(c.get(i, i), 0);
            for j in 0..8 {
                prop_assert_eq!(c.get(i, j), c.get(j, i));
                prop_assert_eq!(s.get(i, j), s.get(j, i));
                prop_assert!(s.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn embedded_rows_have_unit_norm(seed in any::<u64>(), dim in 1usize..6) {
        let v = vocab(8);
        let (c, _) = build_cooccurrence(&v, &random_events(seed, 8), 45, "p").unwrap();
        prop_assume!(c.nnz() > 0);
        let s = sppmi(&c, true).unwrap();
        prop_assume!(s.nnz() > 0);
        let e = svd_embed(&s, &v, dim).unwrap();
        prop_assert!(e.max_norm_deviation() < 1e-10);
        prop_assert_eq!(e.dim(), dim);
    }
}
