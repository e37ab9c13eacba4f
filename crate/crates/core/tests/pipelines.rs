use fedgraph_core::conformal::{QuantileMethod, ScoreKind};
use fedgraph_core::harness::{emit_outputs, run_pipeline, ExperimentConfig, Pipeline, RunRecord, Scenario, OUTPUT_FILES};
use fedgraph_core::{graph, synth, Graph};

fn small() -> (Graph, ExperimentConfig) {
    let g = synth::planted_partition(3, 40, 0.12, 0.01, 12, 1.0, 7).unwrap().largest_component().unwrap();
    let cfg = ExperimentConfig {
        hidden: 16,
        rounds: 15,
        seeds: vec![0],
        scores: vec![ScoreKind::Aps, ScoreKind::Raps],
        quantiles: vec![QuantileMethod::Exact, QuantileMethod::Averaging],
        alphas: vec![0.1, 0.2],
        protos_per_client: 3,
        vgae_rounds: 3,
        vae_epochs: 4,
        vae_latent: 4,
        omit_wall_time: true,
        ..ExperimentConfig::default()
    };
    (g, cfg)
}

fn key(r: &RunRecord) -> (String, u64, String) {
    (r.score.clone(), r.alpha.to_bits(), r.qmethod.clone())
}

#[test]
fn single_client_fed_is_local() {
    let (g, cfg) = small();
    let sc = Scenario::new(&g, &cfg, 0, 1).unwrap();
    let loc = run_pipeline(&cfg, &g, &sc, Pipeline::Loc).unwrap();
    let fed = run_pipeline(&cfg, &g, &sc, Pipeline::Fed).unwrap();
    for f in fed.iter().filter(|r| r.qmethod == "exact") {
        let l = loc.iter().find(|l| l.score == f.score && l.alpha == f.alpha).unwrap();
        assert_eq!(
            (l.coverage, l.inefficiency, l.accuracy, l.qhat),
            (f.coverage, f.inefficiency, f.accuracy, f.qhat),
            "{} α={}",
            f.score,
            f.alpha
        );
    }
}

#[test]
fn no_new_edges_means_gen_is_fed() {
    let (g, mut cfg) = small();
    cfg.edge_top_p = 0.0;
    let sc = Scenario::new(&g, &cfg, 0, 3).unwrap();
    let fed = run_pipeline(&cfg, &g, &sc, Pipeline::Fed).unwrap();
    let gen = run_pipeline(&cfg, &g, &sc, Pipeline::Gen).unwrap();
    assert_eq!(fed.len(), gen.len());
    for (f, q) in fed.iter().zip(&gen) {
        assert_eq!(key(f), key(q));
        assert_eq!((f.coverage, f.inefficiency, f.accuracy, f.qhat), (q.coverage, q.inefficiency, q.accuracy, q.qhat));
        assert!(q.scalars_comm > f.scalars_comm, "prototype and vgae traffic is booked");
    }
}

#[test]
fn thread_pool_and_serial_agree() {
    let (g, cfg) = small();
    let sc = Scenario::new(&g, &cfg, 1, 3).unwrap();
    let serial = ExperimentConfig {
        concurrent: false,
        ..cfg.clone()
    };
    for p in [Pipeline::Loc, Pipeline::Fed, Pipeline::Gen] {
        let a = run_pipeline(&cfg, &g, &sc, p).unwrap();
        let b = run_pipeline(&serial, &g, &sc, p).unwrap();
        assert_eq!(a, b, "{}", p.name());
    }
}

#[test]
fn records_are_sane() {
    let (g, cfg) = small();
    let sc = Scenario::new(&g, &cfg, 2, 3).unwrap();
    let recs = run_pipeline(&cfg, &g, &sc, Pipeline::Fed).unwrap();
    assert_eq!(recs.len(), 2 * 2 * 2);
    for r in &recs {
        assert!((0.0..=1.0).contains(&r.coverage));
        assert!(r.inefficiency >= 0.0 && r.inefficiency <= 3.0);
        assert_eq!(r.k, 3);
        assert_eq!(r.delta_e_pct, sc.delta_e_pct());
    }
    let loc = run_pipeline(&cfg, &g, &sc, Pipeline::Loc).unwrap();
    assert!(loc.iter().all(|r| r.qmethod == "local" && r.scalars_comm == 0));
}

#[test]
fn outputs_are_byte_identical_across_reruns() {
    let (g, mut cfg) = small();
    let data = tempfile::tempdir().unwrap();
    graph::write_graph(&g, data.path()).unwrap();
    cfg.dataset = data.path().to_string_lossy().into_owned();
    cfg.clients = vec![2];
    cfg.pipelines = vec![Pipeline::Fed, Pipeline::Gen];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_outputs(&fedgraph_core::harness::run_experiment(&cfg).unwrap(), a.path()).unwrap();
    emit_outputs(&fedgraph_core::harness::run_experiment(&cfg).unwrap(), b.path()).unwrap();
    for f in OUTPUT_FILES {
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f}");
    }
    let acc = std::fs::read_to_string(a.path().join("accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 2, "one K, header plus one row:\n{acc}");
}
