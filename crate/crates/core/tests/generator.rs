use fedgraph_core::federation::CommsLedger;
use fedgraph_core::generator::{
    aggregate_and_broadcast, make_prototypes, predict_and_augment, train_vae, VaeTraining,
};
use fedgraph_core::models::VgaeModel;
use fedgraph_core::rng::{self, Rng};
use fedgraph_core::Matrix;
use rand::{Rng as _, SeedableRng};

fn random(rows: usize, cols: usize, r: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn top_p_matches_a_full_sort() {
    let mut r = Rng::seed_from_u64(3);
    let x = random(20, 4, &mut r);
    let local_edges: Vec<(usize, usize)> = (0..19).map(|v| (v, v + 1)).collect();
    let mut ledger = CommsLedger::default();
    // client 1 owns the five candidate prototypes; client 0 augments
    let shared = aggregate_and_broadcast(&[random(2, 4, &mut r), random(5, 4, &mut r)], &mut ledger).unwrap();
    let vgae = VgaeModel::new(4);
    let params = vgae.init_params(&mut rng::stream(0, &[]));
    let aug = predict_and_augment(&x, &local_edges, &shared, 0, &vgae, &params, 0.04).unwrap();
    assert_eq!(aug.prototypes, vec![2, 3, 4, 5, 6]);
    assert_eq!(aug.added.len(), 4);

    let features = x.vstack(&shared.features.select_rows(&aug.prototypes)).unwrap();
    let z = vgae.encode_mean(&params, &vgae.operator(25, &local_edges).unwrap(), &features).unwrap();
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for j in 0..5 {
        for v in 0..20 {
            all.push((VgaeModel::edge_probability(&z, 20 + j, v), j, v));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut want: Vec<(usize, usize)> = all[..4].iter().map(|&(_, j, v)| (v, 20 + j)).collect();
    want.sort_unstable();
    assert_eq!(aug.added, want);
    assert_eq!(aug.edges.len(), local_edges.len() + 4);
    for e in &local_edges {
        assert!(aug.edges.contains(e));
    }
}

#[test]
fn zero_fraction_adds_nothing() {
    let mut r = Rng::seed_from_u64(5);
    let x = random(8, 3, &mut r);
    let mut ledger = CommsLedger::default();
    let shared = aggregate_and_broadcast(&[random(2, 3, &mut r), random(2, 3, &mut r)], &mut ledger).unwrap();
    let vgae = VgaeModel::new(3);
    let params = vgae.init_params(&mut r);
    let aug = predict_and_augment(&x, &[(0, 1)], &shared, 1, &vgae, &params, 0.0).unwrap();
    assert!(aug.added.is_empty());
    assert_eq!(aug.n(), 10);
    assert!(predict_and_augment(&x, &[(0, 1)], &shared, 1, &vgae, &params, 1.5).is_err());
}

#[test]
fn prototypes_land_on_both_blobs() {
    let mut r = Rng::seed_from_u64(8);
    let d = 12;
    // two binary patterns with light bit-flip noise
    let rows: Vec<Vec<f64>> = (0..80)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let on = (j < d / 2) == (i % 2 == 0);
                    f64::from((on != r.random_bool(0.05)) as u8)
                })
                .collect()
        })
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let cfg = VaeTraining {
        epochs: 60,
        latent: 2,
        ..VaeTraining::default()
    };
    let vae = train_vae(&x, &cfg, 1).unwrap();
    assert!(vae.epoch_losses.last().unwrap() < &vae.epoch_losses[0]);
    let protos = make_prototypes(&x, &vae, 2, 1).unwrap();
    let side = |row: &[f64]| row[..d / 2].iter().sum::<f64>() > row[d / 2..].iter().sum::<f64>();
    assert_ne!(side(protos.row(0)), side(protos.row(1)), "{protos:?}");
}

#[test]
fn ledger_counts_upload_and_broadcast() {
    let mut ledger = CommsLedger::default();
    let k = 3;
    let (m, d) = (2, 4);
    let parts: Vec<Matrix> = (0..k).map(|_| Matrix::zeros(m, d)).collect();
    let shared = aggregate_and_broadcast(&parts, &mut ledger).unwrap();
    assert_eq!(shared.features.rows(), k * m);
    assert_eq!(ledger.proto_total(), 48);
    assert_eq!(shared.candidates_for(1), vec![0, 1, 4, 5]);
}
