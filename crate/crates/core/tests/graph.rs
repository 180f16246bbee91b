use std::collections::BTreeSet;
use std::fs;

use autodiff::Matrix;
use proptest::prelude::*;
use symbiosis::graph::{
    self, apply_flips, budget_from_fraction, jaccard_purify, load_dataset, make_splits, normalize_adjacency, num_pairs,
    save_dataset, synthetic, tri_decode, tri_encode, Graph, Mode,
};
use symbiosis::Error;

#[test]
fn tri_index_matches_enumeration_up_to_50() {
    for n in 2..=50 {
        let mut k = 0u64;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(tri_encode(i, j, n).unwrap(), k);
                assert_eq!(tri_decode(k, n).unwrap(), (i, j));
                k += 1;
            }
        }
        assert_eq!(k, num_pairs(n));
        assert!(tri_decode(k, n).is_err());
    }
}

fn small_graph() -> Graph {
    let x = Matrix::from_rows(&[
        vec![1.0, 0.0, 1.0],
        vec![0.0, 1.0, 1.0],
        vec![1.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ])
    .unwrap();
    Graph::new(4, [(0, 1), (1, 2), (2, 3), (0, 3)], x, vec![0, 1, 1, 0], 2).unwrap()
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = small_graph();
    save_dataset(&g, dir.path(), Some("toy")).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), g);
}

#[test]
fn loader_symmetrizes_and_drops_self_loops() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&small_graph(), dir.path(), None).unwrap();
    fs::write(dir.path().join("edges.csv"), "i,j\n1,0\n0,1\n3,3\n2,1\n\n3,2\n0,3\n").unwrap();
    let g = load_dataset(dir.path()).unwrap();
    assert_eq!(g.edges(), small_graph().edges());
}

#[test]
fn loader_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));

    save_dataset(&small_graph(), dir.path(), None).unwrap();
    fs::write(dir.path().join("labels.csv"), "0\n1\n2\n0\n").unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(Error::LabelOutOfRange {
            node: 2,
            label: 2,
            classes: 2
        })
    ));

    save_dataset(&small_graph(), dir.path(), None).unwrap();
    fs::write(dir.path().join("labels.csv"), "0\n1\n1\n").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::DatasetMismatch(_))));

    save_dataset(&small_graph(), dir.path(), None).unwrap();
    fs::write(dir.path().join("features.csv"), "1,0,1\n0,1\n1,1,0\n0,0,1\n").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::DatasetMismatch(_))));

    save_dataset(&small_graph(), dir.path(), None).unwrap();
    fs::write(dir.path().join("edges.csv"), "0,9\n").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::DatasetMismatch(_))));

    save_dataset(&small_graph(), dir.path(), None).unwrap();
    fs::write(dir.path().join("edges.csv"), "0;1\n").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line: 1, .. })));
}

fn cora_sized() -> Graph {
    let cfg = synthetic::SyntheticConfig {
        num_nodes: 2708,
        num_classes: 7,
        feature_dim: 70,
        avg_degree: 3.9,
        ..Default::default()
    };
    synthetic::citation_like(&cfg, 1).unwrap()
}

#[test]
fn split_sizes_for_cora_shape() {
    let g = cora_sized();
    let s = make_splits(&g, 20, 0.1, Mode::Transductive, 3).unwrap();
    assert_eq!(s.labeled_train.len(), 140);
    assert_eq!(s.test.len(), 271);
    let rest = 2708 - 140 - 271;
    assert_eq!(s.validation.len(), (rest as f64 * 0.1).round() as usize);
    assert_eq!(s.unlabeled_train.len(), rest - s.validation.len());
    for c in 0..7 {
        assert_eq!(s.labeled_train.iter().filter(|&&v| g.labels()[v] == c).count(), 20);
    }
    let all: BTreeSet<_> = s
        .labeled_train
        .iter()
        .chain(&s.unlabeled_train)
        .chain(&s.validation)
        .chain(&s.test)
        .collect();
    assert_eq!(all.len(), 2708);
    assert_eq!(s, make_splits(&g, 20, 0.1, Mode::Transductive, 3).unwrap());
    assert_ne!(s.test, make_splits(&g, 20, 0.1, Mode::Transductive, 4).unwrap().test);
    for frac in [0.05, 0.1, 0.2, 0.4] {
        let s = make_splits(&g, 20, frac, Mode::Inductive, 0).unwrap();
        assert_eq!(s.test.len(), (frac * 2708.0).round() as usize);
        assert_eq!(s.training_nodes(2708).len(), 2708 - s.test.len());
    }
}

#[test]
fn split_rejects_small_class() {
    let g = small_graph();
    assert!(matches!(
        make_splits(&g, 3, 0.25, Mode::Transductive, 0),
        Err(Error::ClassTooSmall {
            requested: 3,
            available: 2,
            ..
        })
    ));
}

#[test]
fn budget_on_cora_and_pubmed_edge_counts() {
    // Only the edge count matters, so path graphs with the real counts work.
    for (edges, expected) in [(5278usize, 263usize), (44324, 2216)] {
        let g = Graph::new(
            edges + 1,
            (0..edges).map(|k| (k, k + 1)),
            Matrix::zeros(edges + 1, 1),
            vec![0; edges + 1],
            1,
        )
        .unwrap();
        assert_eq!(g.num_edges(), edges);
        assert_eq!(budget_from_fraction(&g, 0.05), expected);
        assert_eq!(budget_from_fraction(&g, 0.0), 0);
    }
}

fn arb_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n).prop_flat_map(|n| {
        let pairs = proptest::collection::vec((0..n, 0..n), 0..3 * n);
        let feats = proptest::collection::vec(proptest::bool::weighted(0.3), n * 5);
        (Just(n), pairs, feats).prop_map(|(n, pairs, feats)| {
            let x = Matrix::from_vec(n, 5, feats.into_iter().map(|b| b as u8 as f64).collect()).unwrap();
            Graph::new(n, pairs, x, vec![0; n], 1).unwrap()
        })
    })
}

fn dense_gcn_oracle(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (v, row) in a.iter_mut().enumerate() {
        row[v] = 1.0;
    }
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (d[i] * d[j]).sqrt()).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalization_matches_dense_oracle(g in arb_graph(20), probe in proptest::collection::vec(-1.0f64..1.0, 20)) {
        let n = g.num_nodes();
        let w = vec![1.0; g.num_edges()];
        let norm = normalize_adjacency(g.edges(), &w, n).unwrap().to_dense();
        let oracle = dense_gcn_oracle(n, g.edges());
        for (r, o) in norm.iter().zip(&oracle) {
            for (x, y) in r.iter().zip(o) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }
        // Row sums can exceed 1 (a star centre), but the spectrum lies in
        // [-1, 1] with sqrt(deg) as the top eigenvector.
        let deg: Vec<f64> = (0..n).map(|v| 1.0 + g.edges().iter().filter(|&&(i, j)| i == v || j == v).count() as f64).collect();
        for i in 0..n {
            let lhs: f64 = (0..n).map(|j| norm[i][j] * deg[j].sqrt()).sum();
            prop_assert!((lhs - deg[i].sqrt()).abs() < 1e-12);
        }
        let x = &probe[..n];
        let quad: f64 = (0..n).map(|i| (0..n).map(|j| x[i] * norm[i][j] * x[j]).sum::<f64>()).sum();
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!(quad.abs() <= norm2 + 1e-12);
    }

    #[test]
    fn flips_toggle_exactly(g in arb_graph(15), picks in proptest::collection::vec(any::<u64>(), 0..10)) {
        let n = g.num_nodes();
        let flips: BTreeSet<(usize, usize)> = picks
            .iter()
            .map(|&k| tri_decode(k % num_pairs(n), n).unwrap())
            .collect();
        let flips: Vec<_> = flips.into_iter().collect();
        let h = apply_flips(&g, &flips).unwrap();
        let before: BTreeSet<_> = g.edges().iter().copied().collect();
        let after: BTreeSet<_> = h.edges().iter().copied().collect();
        let diff: Vec<_> = before.symmetric_difference(&after).copied().collect();
        prop_assert_eq!(diff, flips.clone());
        prop_assert_eq!(apply_flips(&h, &flips).unwrap(), g);
    }

    #[test]
    fn jaccard_idempotent_and_subtractive(g in arb_graph(15), tau in 0.0f64..0.6) {
        let p = jaccard_purify(&g, tau).unwrap();
        let orig: BTreeSet<_> = g.edges().iter().collect();
        prop_assert!(p.edges().iter().all(|e| orig.contains(e)));
        for &(i, j) in g.edges() {
            let keep = graph::jaccard_similarity(g.features().row(i), g.features().row(j)) > tau;
            prop_assert_eq!(keep, p.has_edge(i, j));
        }
        prop_assert_eq!(jaccard_purify(&p, tau).unwrap(), p);
    }
}
