use fedgraph_core::kernel::layers::softmax_rows;
use fedgraph_core::kernel::{AdamState, Matrix};
use fedgraph_core::models::{
    fit_temperature, train_classifier, Architecture, Reconstruction, VaeModel, VgaeModel,
};
use fedgraph_core::rng::{self, Rng};
use fedgraph_core::synth;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut Rng::seed_from_u64(seed));
    p
}

/// Row `v` of `a` must equal row `perm[v]` of `b`.
fn max_permuted_diff(a: &Matrix, b: &Matrix, perm: &[usize]) -> f64 {
    (0..a.rows())
        .flat_map(|v| a.row(v).iter().zip(b.row(perm[v])).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn classifiers_are_permutation_equivariant() {
    let g = synth::planted_partition(3, 12, 0.3, 0.05, 6, 1.0, 0).unwrap();
    for arch in [Architecture::Gcn, Architecture::Sage] {
        let model = arch.build(6, 8, 3);
        let p = model.init_params(&mut rng::stream(1, &[]));
        let op = model.operator(g.n(), g.edges()).unwrap();
        let base = model.logits(&p, &op, g.features()).unwrap();
        for seed in 0..5 {
            let perm = permutation(g.n(), seed);
            let h = g.permuted(&perm).unwrap();
            let op_h = model.operator(h.n(), h.edges()).unwrap();
            let out = model.logits(&p, &op_h, h.features()).unwrap();
            assert!(max_permuted_diff(&base, &out, &perm) < 1e-10, "{} seed {seed}", arch.name());
        }
    }
}

#[test]
fn vgae_encoder_is_permutation_equivariant() {
    let g = synth::planted_partition(2, 10, 0.4, 0.05, 5, 1.0, 2).unwrap();
    let vgae = VgaeModel::new(5);
    let p = vgae.init_params(&mut rng::stream(2, &[]));
    let z = vgae.encode_mean(&p, &vgae.operator(g.n(), g.edges()).unwrap(), g.features()).unwrap();
    let perm = permutation(g.n(), 9);
    let h = g.permuted(&perm).unwrap();
    let zh = vgae.encode_mean(&p, &vgae.operator(h.n(), h.edges()).unwrap(), h.features()).unwrap();
    assert!(max_permuted_diff(&z, &zh, &perm) < 1e-10);
    let (u, v) = g.edges()[0];
    let before = VgaeModel::edge_probability(&z, u, v);
    let after = VgaeModel::edge_probability(&zh, perm[u], perm[v]);
    assert!((before - after).abs() < 1e-12);
}

#[test]
fn training_loss_goes_down() {
    let g = synth::planted_partition(3, 30, 0.2, 0.02, 9, 1.0, 5).unwrap();
    let targets: Vec<(usize, usize)> = (0..g.n()).step_by(3).map(|v| (v, g.labels()[v])).collect();
    for arch in [Architecture::Gcn, Architecture::Sage] {
        let model = arch.build(9, 16, 3);
        let mut p = model.init_params(&mut rng::stream(0, &[]));
        let mut adam = AdamState::new(p.len(), 0.01);
        let op = model.operator(g.n(), g.edges()).unwrap();
        let losses = train_classifier(model.as_ref(), &mut p, &mut adam, &op, g.features(), &targets, 10, 5e-4).unwrap();
        assert!(losses[9] < losses[0], "{}: {losses:?}", arch.name());
    }
}

/// Labels drawn from softmax(z / T0) must give back roughly T0.
fn recovered_temperature(t0: f64, seed: u64) -> f64 {
    let mut r = Rng::seed_from_u64(seed);
    let n = 20_000;
    let logits =
        Matrix::from_vec(n, 4, (0..n * 4).map(|_| 3.0 * r.random_range(-1.0..1.0)).collect()).unwrap();
    let probs = softmax_rows(&logits.map(|v| v / t0));
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let u: f64 = r.random();
            let mut acc = 0.0;
            probs.row(i).iter().position(|&p| {
                acc += p;
                u < acc
            })
            .unwrap_or(3)
        })
        .collect();
    fit_temperature(&logits, &labels).unwrap()
}

#[test]
fn temperature_scaling_recovers_the_generating_temperature() {
    let t1 = recovered_temperature(1.0, 1);
    assert!((t1 - 1.0).abs() <= 0.05, "T = {t1}");
    let t2 = recovered_temperature(2.0, 2);
    assert!((t2 - 2.0).abs() <= 0.1, "T = {t2}");
}

#[test]
fn vae_without_sparsity_is_the_plain_elbo() {
    let mut r = Rng::seed_from_u64(4);
    let x = Matrix::from_vec(6, 10, (0..60).map(|_| f64::from(r.random_bool(0.3) as u8)).collect()).unwrap();
    let eps = Matrix::from_vec(6, 3, (0..18).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let vae = VaeModel::new(10, 3, Reconstruction::Bernoulli).unwrap().with_sparsity(0.1, 0.0).unwrap();
    let p = vae.init_params(&mut r);
    let l = vae.loss(&p, &x, &eps).unwrap();
    assert!(l.sparse > 0.0, "the penalty is still measured");
    assert_eq!(l.total, l.rec + l.kl);
    let sparse = VaeModel { beta: 0.5, ..vae };
    let ls = sparse.loss(&p, &x, &eps).unwrap();
    assert!((ls.total - (l.total + 0.5 * l.sparse)).abs() < 1e-12);
}
