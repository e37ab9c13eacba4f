//! Missing-neighbour generation.
//!
//! Each client trains a feature VAE on its training nodes, clusters the
//! reconstructions into prototypes and uploads them. The server concatenates
//! and broadcasts the prototypes; a federated VGAE then scores
//! (prototype, local node) pairs and every client links the top fraction of
//! foreign prototypes into its subgraph.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::federation::{
    dp_sgd_step, run_federated_training, CommsLedger, DpConfig, FedOutcome, FedSchedule, LocalTrainer, Weighting,
};
use crate::kernel::{adam_step, AdamState, Matrix, ParamVector, SparseMatrix};
use crate::models::{sample_negatives, Reconstruction, VaeModel, VgaeModel};
use crate::rng::{self, Rng};

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Matrix,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centers: &Matrix) -> (usize, f64) {
    (0..centers.rows()).fold((0, f64::INFINITY), |best, c| {
        let d = sq_dist(row, centers.row(c));
        if d < best.1 {
            (c, d)
        } else {
            best
        }
    })
}

/// Lloyd's algorithm with k-means++ seeding. Ties go to the lowest centre id
/// and an emptied cluster keeps its previous centre.
pub fn kmeans(x: &Matrix, m: usize, rng: &mut Rng) -> Result<KMeans> {
    let n = x.rows();
    if m == 0 || m > n {
        return Err(Error::Config(format!("cannot form {m} clusters from {n} points")));
    }
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every point coincides with a centre; take unused rows in order.
            (0..n).find(|i| !chosen.contains(i)).expect("m <= n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut centers = x.select_rows(&chosen);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let next_assign: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centers).0).collect();
        let mut sums = Matrix::zeros(m, x.cols());
        let mut counts = vec![0usize; m];
        for (i, &c) in next_assign.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..m {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let new: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&new, centers.row(c)).sqrt());
            centers.row_mut(c).copy_from_slice(&new);
        }
        let stable = next_assign == assignment;
        assignment = next_assign;
        if stable || shift <= KMEANS_TOL {
            break;
        }
    }
    Ok(KMeans {
        centers,
        assignment,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct VaeTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub latent: usize,
    pub rho: f64,
    pub beta: f64,
    /// Autodetected from the features when `None`.
    pub recon: Option<Reconstruction>,
    /// Averages singleton-batch gradients instead of one batch gradient; the
    /// sparsity statistic is then computed per sample. Forced on under DP.
    pub per_sample: bool,
    pub dp: DpConfig,
}

impl Default for VaeTraining {
    fn default() -> Self {
        VaeTraining {
            epochs: 50,
            batch_size: 32,
            lr: 0.005,
            latent: 32,
            rho: 0.1,
            beta: 0.01,
            recon: None,
            per_sample: false,
            dp: DpConfig::disabled(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedVae {
    pub model: VaeModel,
    pub params: ParamVector,
    pub steps: usize,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Basic-composition ε over all steps when DP is on.
    pub epsilon: Option<f64>,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Minibatch Adam training of a feature VAE on the rows of `x`.
pub fn train_vae(x: &Matrix, cfg: &VaeTraining, seed: u64) -> Result<TrainedVae> {
    cfg.dp.validate()?;
    if x.rows() == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("VAE needs at least one row and a positive batch size".into()));
    }
    let recon = cfg.recon.unwrap_or_else(|| Reconstruction::detect(x));
    let model = VaeModel::new(x.cols(), cfg.latent, recon)?.with_sparsity(cfg.rho, cfg.beta)?;
    let mut params = model.init_params(&mut rng::stream(seed, &[rng::tag::INIT, rng::tag::VAE]));
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut rng = rng::stream(seed, &[rng::tag::VAE]);
    let mut noise = rng::stream(seed, &[rng::tag::DP_NOISE]);
    let per_sample = cfg.per_sample || cfg.dp.enabled;
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = if per_sample {
                let mut grads = Vec::with_capacity(batch.len());
                let mut loss = 0.0;
                for &i in batch {
                    let xi = x.select_rows(&[i]);
                    let eps = normal_matrix(1, cfg.latent, &mut rng);
                    let l = model.loss(&params, &xi, &eps)?;
                    loss += l.total;
                    grads.push(l.grad.as_slice().to_vec());
                }
                let g = if cfg.dp.enabled {
                    dp_sgd_step(&grads, &cfg.dp, &mut noise)?
                } else {
                    let mut sum = vec![0.0; params.len()];
                    for g in &grads {
                        for (s, v) in sum.iter_mut().zip(g) {
                            *s += v;
                        }
                    }
                    let b = grads.len() as f64;
                    sum.iter_mut().for_each(|s| *s /= b);
                    sum
                };
                (loss / batch.len() as f64, g)
            } else {
                let xb = x.select_rows(batch);
                let eps = normal_matrix(batch.len(), cfg.latent, &mut rng);
                let l = model.loss(&params, &xb, &eps)?;
                (l.total, l.grad.as_slice().to_vec())
            };
            adam_step(&mut params, &grad, &mut adam)?;
            total += loss;
            batches += 1;
            steps += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    Ok(TrainedVae {
        model,
        params,
        steps,
        epoch_losses,
        epsilon: cfg.dp.enabled.then(|| cfg.dp.reported_epsilon(steps)),
    })
}

/// K-means centres of the VAE reconstructions `p_θ(μ(x_v))` of `x_train`.
pub fn make_prototypes(x_train: &Matrix, vae: &TrainedVae, m: usize, seed: u64) -> Result<Matrix> {
    if m == 0 || m > x_train.rows() {
        return Err(Error::Config(format!(
            "{m} prototypes requested from {} training nodes",
            x_train.rows()
        )));
    }
    let recon = vae.model.reconstruct(&vae.params, x_train)?;
    Ok(kmeans(&recon, m, &mut rng::stream(seed, &[rng::tag::KMEANS]))?.centers)
}

/// The server's concatenation of all client prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedPrototypes {
    pub features: Matrix,
    /// Contributing client of each row.
    pub owner: Vec<usize>,
}

impl SharedPrototypes {
    /// Rows a client may link to: everything it did not contribute.
    pub fn candidates_for(&self, client: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&i| self.owner[i] != client).collect()
    }
}

/// Concatenates per-client prototypes in client order and books the upload
/// and the broadcast in the ledger.
pub fn aggregate_and_broadcast(per_client: &[Matrix], ledger: &mut CommsLedger) -> Result<SharedPrototypes> {
    let Some(first) = per_client.first() else {
        return Err(Error::Federation("no client contributed prototypes".into()));
    };
    let d = first.cols();
    let mut rows = Vec::new();
    let mut owner = Vec::new();
    for (k, m) in per_client.iter().enumerate() {
        if m.cols() != d {
            return Err(Error::shape("prototype aggregation", m.shape(), (m.rows(), d)));
        }
        for r in 0..m.rows() {
            rows.push(m.row(r).to_vec());
            owner.push(k);
        }
    }
    ledger.record_prototypes(&per_client.iter().map(Matrix::rows).collect::<Vec<_>>(), d);
    let features = if rows.is_empty() {
        Matrix::zeros(0, d)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(SharedPrototypes { features, owner })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct VgaeTraining {
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
}

impl Default for VgaeTraining {
    fn default() -> Self {
        VgaeTraining {
            rounds: 50,
            local_epochs: 2,
            lr: 0.01,
        }
    }
}

struct VgaeClient {
    x: Matrix,
    op: SparseMatrix,
    edges: Vec<(usize, usize)>,
    edge_set: BTreeSet<(usize, usize)>,
}

struct VgaeFederation {
    model: VgaeModel,
    clients: Vec<VgaeClient>,
    cfg: VgaeTraining,
}

impl LocalTrainer for VgaeFederation {
    type State = AdamState;

    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn samples(&self, client: usize) -> usize {
        self.clients[client].edges.len()
    }

    fn init_state(&self, _client: usize, global: &ParamVector) -> AdamState {
        AdamState::new(global.len(), self.cfg.lr)
    }

    fn train_round(&self, client: usize, params: &mut ParamVector, adam: &mut AdamState, rng: &mut Rng) -> Result<()> {
        let c = &self.clients[client];
        let n = c.x.rows();
        for _ in 0..self.cfg.local_epochs {
            let negatives = sample_negatives(n, &c.edge_set, c.edges.len(), rng);
            let eps = normal_matrix(n, self.model.latent, rng);
            let l = self.model.loss(params, &c.op, &c.x, &c.edges, &negatives, &eps)?;
            adam_step(params, l.grad.as_slice(), adam)?;
        }
        Ok(())
    }
}

/// Federated VGAE on the clients' own subgraphs, averaged without sample
/// weights. Clients without edges sit out.
pub fn train_vgae_federated(
    graphs: &[(Matrix, Vec<(usize, usize)>)],
    cfg: &VgaeTraining,
    seed: u64,
    concurrent: bool,
) -> Result<(VgaeModel, FedOutcome)> {
    let Some((x0, _)) = graphs.first() else {
        return Err(Error::Federation("no clients for VGAE training".into()));
    };
    let model = VgaeModel::new(x0.cols());
    let clients = graphs
        .iter()
        .map(|(x, edges)| {
            Ok(VgaeClient {
                x: x.clone(),
                op: model.operator(x.rows(), edges)?,
                edges: edges.clone(),
                edge_set: edges.iter().copied().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let init = model.init_params(&mut rng::stream(seed, &[rng::tag::INIT, rng::tag::VGAE]));
    let fed = VgaeFederation {
        model,
        clients,
        cfg: *cfg,
    };
    let out = run_federated_training(
        &fed,
        init,
        FedSchedule {
            rounds: cfg.rounds,
            weighting: Weighting::Uniform,
            concurrent,
            seed: rng::derive_seed(seed, &[rng::tag::VGAE]),
        },
    )?;
    Ok((model, out))
}

/// A client subgraph with foreign prototypes appended as nodes
/// `n_local..n_local + prototypes.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSubgraph {
    pub n_local: usize,
    pub features: Matrix,
    /// Original edges plus `added`, canonical and sorted.
    pub edges: Vec<(usize, usize)>,
    /// New `(local node, prototype node)` edges.
    pub added: Vec<(usize, usize)>,
    /// Row of each appended node in the shared prototype matrix.
    pub prototypes: Vec<usize>,
}

impl AugmentedSubgraph {
    pub fn n(&self) -> usize {
        self.features.rows()
    }
}

/// Links the top `⌈p · pairs⌉` (prototype, node) pairs by VGAE edge
/// probability. Prototypes are encoded as isolated nodes; ties go to the
/// lower prototype, then the lower node.
pub fn predict_and_augment(
    x_local: &Matrix,
    edges: &[(usize, usize)],
    shared: &SharedPrototypes,
    client: usize,
    vgae: &VgaeModel,
    params: &ParamVector,
    p: f64,
) -> Result<AugmentedSubgraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("edge fraction {p} outside [0, 1]")));
    }
    let n_local = x_local.rows();
    let prototypes = shared.candidates_for(client);
    let features = x_local.vstack(&shared.features.select_rows(&prototypes))?;
    let pairs = prototypes.len() * n_local;
    let keep = (p * pairs as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut added = Vec::new();
    if pairs == 0 {
        log::info!("augment: client {client} has no candidate pairs");
    } else if keep > 0 {
        let op = vgae.operator(features.rows(), edges)?;
        let z = vgae.encode_mean(params, &op, &features)?;
        let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(pairs);
        for j in 0..prototypes.len() {
            for v in 0..n_local {
                scored.push((VgaeModel::edge_probability(&z, n_local + j, v), j, v));
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        added = scored[..keep.min(pairs)]
            .iter()
            .map(|&(_, j, v)| (v, n_local + j))
            .collect();
        added.sort_unstable();
    }
    let mut all: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    all.extend_from_slice(&added);
    all.sort_unstable();
    all.dedup();
    Ok(AugmentedSubgraph {
        n_local,
        features,
        edges: all,
        added,
        prototypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cluster_is_the_mean() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 2.0]]).unwrap();
        let km = kmeans(&x, 1, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(km.centers.row(0), &[2.0, 2.0]);
    }

    #[test]
    fn two_blobs() {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.1],
            vec![0.2, 0.0],
            vec![0.1, 0.2],
            vec![10.0, 10.0],
            vec![10.3, 9.9],
        ])
        .unwrap();
        for seed in 0..10 {
            let km = kmeans(&x, 2, &mut rng::stream(seed, &[])).unwrap();
            let mut c: Vec<Vec<f64>> = (0..2).map(|i| km.centers.row(i).to_vec()).collect();
            c.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert!((c[0][0] - 0.1).abs() < 1e-12 && (c[0][1] - 0.1).abs() < 1e-12);
            assert!((c[1][0] - 10.15).abs() < 1e-12 && (c[1][1] - 9.95).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_clusters() {
        let x = Matrix::zeros(2, 3);
        assert!(matches!(kmeans(&x, 3, &mut rng::stream(0, &[])), Err(Error::Config(_))));
        // Duplicate points still yield distinct seeds.
        assert_eq!(kmeans(&x, 2, &mut rng::stream(0, &[])).unwrap().centers.rows(), 2);
    }

    #[test]
    fn single_client_gets_no_candidates() {
        let mut ledger = CommsLedger::default();
        let shared = aggregate_and_broadcast(&[Matrix::zeros(2, 4)], &mut ledger).unwrap();
        assert!(shared.candidates_for(0).is_empty());
        let x = Matrix::zeros(3, 4);
        let vgae = VgaeModel::new(4);
        let params = vgae.init_params(&mut rng::stream(0, &[]));
        let aug = predict_and_augment(&x, &[(0, 1)], &shared, 0, &vgae, &params, 0.5).unwrap();
        assert!(aug.added.is_empty());
        assert_eq!(aug.edges, vec![(0, 1)]);
    }

    #[test]
    fn aggregate_counts() {
        let mut ledger = CommsLedger::default();
        let per = vec![Matrix::zeros(2, 4), Matrix::zeros(2, 4), Matrix::zeros(2, 4)];
        let shared = aggregate_and_broadcast(&per, &mut ledger).unwrap();
        assert_eq!(shared.features.rows(), 6);
        assert_eq!(shared.candidates_for(1), vec![0, 1, 4, 5]);
        assert_eq!(ledger.proto_total(), 48);
    }
}
