use std::fs;

use fedgraph_core::graph::{load_graph, write_graph, EDGES_FILE, FEATURES_FILE, LABELS_FILE};
use fedgraph_core::partition::{missing_edge_report, partition_graph};
use fedgraph_core::{synth, Error, Graph, Matrix};

fn write(dir: &std::path::Path, features: &str, edges: &str, labels: &str) {
    fs::write(dir.join(FEATURES_FILE), features).unwrap();
    fs::write(dir.join(EDGES_FILE), edges).unwrap();
    fs::write(dir.join(LABELS_FILE), labels).unwrap();
}

#[test]
fn roundtrip_keeps_everything() {
    let g = synth::planted_partition(3, 15, 0.3, 0.02, 5, 1.0, 4).unwrap().largest_component().unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_graph(&g, dir.path()).unwrap();
    let back = load_graph(dir.path()).unwrap();
    assert_eq!(back.edges(), g.edges());
    assert_eq!(back.labels(), g.labels());
    assert_eq!(back.features(), g.features());
}

#[test]
fn sparse_ids_comments_and_largest_component() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "# id f0 f1\n10\t1 0\n20\t0 1\n30\t1 1\n99\t0 0\n",
        "10 20\n20 30\n",
        "10\t0\n20\t1\n30\t1\n99\t2\n",
    );
    let g = load_graph(dir.path()).unwrap();
    assert_eq!(g.n(), 3, "isolated node 99 is outside the largest component");
    assert_eq!(g.ids(), &[10, 20, 30]);
    assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    assert_eq!(g.feature_dim(), 2);
}

#[test]
fn ragged_feature_row_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "1 0.5 0.5\n2 0.1\n", "1 2\n", "1 0\n2 0\n");
    match load_graph(dir.path()) {
        Err(Error::Format { path, line, .. }) => {
            assert!(path.ends_with(FEATURES_FILE));
            assert_eq!(line, 2);
        }
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn dangling_edge_and_self_loop_are_integrity_errors() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "1 0\n2 1\n", "1 3\n", "1 0\n2 1\n");
    assert!(matches!(load_graph(dir.path()), Err(Error::Integrity(_))));
    write(dir.path(), "1 0\n2 1\n", "2 2\n", "1 0\n2 1\n");
    assert!(matches!(load_graph(dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn missing_label_row() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "1 0\n2 1\n", "1 2\n", "1 0\n");
    assert!(matches!(load_graph(dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn missing_file_is_io() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_graph(dir.path()), Err(Error::Io(_))));
}

fn brute_force_min_cut(n: usize, edges: &[(usize, usize)]) -> usize {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == n / 2)
        .map(|m| edges.iter().filter(|&&(u, v)| (m >> u & 1) != (m >> v & 1)).count())
        .min()
        .unwrap()
}

#[test]
fn four_node_path_cut_matches_brute_force() {
    let edges = vec![(0, 1), (1, 2), (2, 3)];
    let g = Graph::new(edges.clone(), Matrix::zeros(4, 1), vec![0; 4], 1).unwrap();
    let best = brute_force_min_cut(4, &edges);
    assert_eq!(best, 1);
    for seed in 0..20 {
        let p = partition_graph(&g, 2, seed, 0.0).unwrap();
        assert_eq!(p.client_sizes(), vec![2, 2]);
        let rep = missing_edge_report(&p);
        assert_eq!((rep.count, (rep.fraction * 1000.0).round()), (best, 333.0), "seed {seed}");
    }
}

#[test]
fn refinement_never_increases_the_cut() {
    let g = synth::cora_like(2).unwrap();
    for k in [3, 10] {
        let p = partition_graph(&g, k, 1, 0.05).unwrap();
        assert!(p.cut_history.len() >= 2);
        assert!(p.cut_history.windows(2).skip(1).all(|w| w[1] <= w[0]), "{:?}", p.cut_history);
        assert_eq!(*p.cut_history.last().unwrap(), p.cut_edges.len());
    }
}

#[test]
fn partition_is_reproducible_and_balanced() {
    let g = synth::cora_like(1).unwrap();
    let a = partition_graph(&g, 5, 3, 0.05).unwrap();
    let b = partition_graph(&g, 5, 3, 0.05).unwrap();
    assert_eq!(a, b);
    let cap = ((1.05 * g.n() as f64) / 5.0).ceil() as usize;
    assert!(a.client_sizes().iter().all(|&s| s <= cap), "{:?} over {cap}", a.client_sizes());
    let cut = g.edges().iter().filter(|&&(u, v)| a.assignment[u] != a.assignment[v]).count();
    assert_eq!(cut, missing_edge_report(&a).count);
}
