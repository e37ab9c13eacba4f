use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fedgraph_core::conformal::{federated_quantile, QuantileMethod, ScoreSet, TDigestSketch, DEFAULT_COMPRESSION};
use fedgraph_core::kernel::{AdamState, SparseMatrix};
use fedgraph_core::models::{train_classifier, Architecture};
use fedgraph_core::partition::partition_graph;
use fedgraph_core::{synth, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dense(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let (a, b) = (random(512, 256, &mut r), random(256, 64, &mut r));
    c.bench_function("matmul 512x256x64", |bch| bch.iter(|| a.matmul(&b).unwrap()));
    let g = synth::cora_like(0).unwrap();
    let op = SparseMatrix::gcn_normalized(g.n(), g.edges()).unwrap();
    let x = random(g.n(), 64, &mut r);
    c.bench_function("spmm cora-like x64", |bch| bch.iter(|| op.spmm(&x).unwrap()));
}

fn training(c: &mut Criterion) {
    let g = synth::cora_like(0).unwrap();
    let targets: Vec<(usize, usize)> = (0..g.n()).step_by(10).map(|v| (v, g.labels()[v])).collect();
    for arch in [Architecture::Gcn, Architecture::Sage] {
        let model = arch.build(g.feature_dim(), 64, g.num_classes());
        let op = model.operator(g.n(), g.edges()).unwrap();
        let p0 = model.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        c.bench_function(&format!("{} full-batch step", arch.name()), |bch| {
            bch.iter_batched(
                || (p0.clone(), AdamState::new(p0.len(), 0.01)),
                |(mut p, mut adam)| train_classifier(model.as_ref(), &mut p, &mut adam, &op, g.features(), &targets, 1, 5e-4).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn conformal(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let clients: Vec<Vec<f64>> = (0..10).map(|_| (0..500).map(|_| r.random()).collect()).collect();
    let set = ScoreSet::from_client_scores(clients.clone()).unwrap();
    for m in [QuantileMethod::Exact, QuantileMethod::Averaging, QuantileMethod::TDigest] {
        c.bench_function(&format!("quantile {m:?} 10x500"), |bch| bch.iter(|| federated_quantile(&set, 0.1, m).unwrap()));
    }
    let sketches: Vec<TDigestSketch> =
        clients.iter().map(|v| TDigestSketch::from_values(v, DEFAULT_COMPRESSION).unwrap()).collect();
    c.bench_function("tdigest build 500", |bch| bch.iter(|| TDigestSketch::from_values(&clients[0], DEFAULT_COMPRESSION).unwrap()));
    c.bench_function("tdigest merge 10", |bch| {
        bch.iter(|| sketches[1..].iter().fold(sketches[0].clone(), |acc, s| acc.merge(s)))
    });
}

fn partitioning(c: &mut Criterion) {
    let g = synth::cora_like(0).unwrap();
    let mut group = c.benchmark_group("partition");
    group.sample_size(10);
    for k in [5, 20] {
        group.bench_function(format!("cora-like K={k}"), |bch| bch.iter(|| partition_graph(&g, k, 0, 0.05).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, dense, training, conformal, partitioning);
criterion_main!(benches);
