//! Variational graph autoencoder for link prediction.
//!
//! A shared GCN layer `H = ReLU(Â X W0 + b0)` feeds two GCN heads producing
//! `μ` and `log σ²` (latent width 16). Edges are scored by `σ(z_u · z_v)`.
//! The loss is the mean logistic loss over positive edges, plus the same over
//! sampled non-edges, plus `KL(q ‖ N(0, I)) / n`.

use std::collections::BTreeSet;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::kernel::layers::{relu_backward, relu_forward, sigmoid, softplus};
use crate::kernel::{dot, Matrix, ParamVector, SparseMatrix};
use crate::models::{gaussian_kl, glorot};
use crate::rng::Rng;

pub const VGAE_HIDDEN: usize = 64;
pub const VGAE_LATENT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VgaeModel {
    pub in_dim: usize,
    pub hidden: usize,
    pub latent: usize,
}

#[derive(Debug, Clone)]
pub struct VgaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub grad: ParamVector,
}

struct Encoded {
    pre: Matrix,
    hidden: Matrix,
    mu: Matrix,
    logvar: Matrix,
}

/// Draws `count` node pairs `(u, v)`, `u != v`, that are not edges. Draws are
/// independent, so repeats are possible. If the graph is complete an empty
/// list is returned.
pub fn sample_negatives(
    n: usize,
    edges: &BTreeSet<(usize, usize)>,
    count: usize,
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    let possible = n * n.saturating_sub(1) / 2;
    if possible <= edges.len() {
        log::warn!("vgae: graph on {n} nodes has no non-edges to sample");
        return Vec::new();
    }
    if possible - edges.len() < count {
        log::info!(
            "vgae: {} non-edges for {count} negatives; sampling with replacement",
            possible - edges.len()
        );
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v && !edges.contains(&(u.min(v), u.max(v))) {
            out.push((u, v));
        }
    }
    out
}

impl VgaeModel {
    pub fn new(in_dim: usize) -> Self {
        VgaeModel {
            in_dim,
            hidden: VGAE_HIDDEN,
            latent: VGAE_LATENT,
        }
    }

    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut p = ParamVector::new();
        p.push_matrix("w0", &glorot(self.in_dim, self.hidden, rng)).unwrap();
        p.push("b0", &[self.hidden], &vec![0.0; self.hidden]).unwrap();
        p.push_matrix("w_mu", &glorot(self.hidden, self.latent, rng)).unwrap();
        p.push("b_mu", &[self.latent], &vec![0.0; self.latent]).unwrap();
        p.push_matrix("w_logvar", &glorot(self.hidden, self.latent, rng)).unwrap();
        p.push("b_logvar", &[self.latent], &vec![0.0; self.latent]).unwrap();
        p
    }

    pub fn operator(&self, n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
        SparseMatrix::gcn_normalized(n, edges)
    }

    fn encode_full(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Encoded> {
        if x.cols() != self.in_dim || x.rows() != op.n() {
            return Err(Error::Model(format!(
                "vgae expects {}x{} features, got {}x{}",
                op.n(),
                self.in_dim,
                x.rows(),
                x.cols()
            )));
        }
        let mut pre = op.spmm(&x.matmul(&p.matrix("w0")?)?)?;
        pre.add_row_vector(p.slice("b0")?)?;
        let hidden = relu_forward(&pre);
        let mut mu = op.spmm(&hidden.matmul(&p.matrix("w_mu")?)?)?;
        mu.add_row_vector(p.slice("b_mu")?)?;
        let mut logvar = op.spmm(&hidden.matmul(&p.matrix("w_logvar")?)?)?;
        logvar.add_row_vector(p.slice("b_logvar")?)?;
        Ok(Encoded {
            pre,
            hidden,
            mu,
            logvar,
        })
    }

    /// Posterior means, used as embeddings at prediction time.
    pub fn encode_mean(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
        Ok(self.encode_full(p, op, x)?.mu)
    }

    pub fn hidden_preactivation(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
        Ok(self.encode_full(p, op, x)?.pre)
    }

    /// Edge probability `σ(z_u · z_v)`.
    pub fn edge_probability(z: &Matrix, u: usize, v: usize) -> f64 {
        sigmoid(dot(z.row(u), z.row(v)))
    }

    /// Loss and gradient for given positive pairs, negative pairs and
    /// reparameterisation noise (`n × latent`).
    pub fn loss(
        &self,
        p: &ParamVector,
        op: &SparseMatrix,
        x: &Matrix,
        positives: &[(usize, usize)],
        negatives: &[(usize, usize)],
        eps: &Matrix,
    ) -> Result<VgaeLoss> {
        if positives.is_empty() {
            return Err(Error::Model("vgae needs at least one edge".into()));
        }
        let e = self.encode_full(p, op, x)?;
        if eps.shape() != e.mu.shape() {
            return Err(Error::shape("vgae noise", eps.shape(), e.mu.shape()));
        }
        let n = x.rows();
        let mut z = e.mu.clone();
        for ((zv, &lv), &ep) in z
            .as_mut_slice()
            .iter_mut()
            .zip(e.logvar.as_slice())
            .zip(eps.as_slice())
        {
            *zv += (0.5 * lv).exp() * ep;
        }

        let mut dz = Matrix::zeros(n, self.latent);
        let mut recon = 0.0;
        let mut accumulate = |pairs: &[(usize, usize)], positive: bool, recon: &mut f64| {
            if pairs.is_empty() {
                return;
            }
            let scale = 1.0 / pairs.len() as f64;
            let mut part = 0.0;
            for &(u, v) in pairs {
                let s = dot(z.row(u), z.row(v));
                let (l, ds) = if positive {
                    (softplus(-s), sigmoid(s) - 1.0)
                } else {
                    (softplus(s), sigmoid(s))
                };
                part += l;
                let g = ds * scale;
                let (zu, zv) = (z.row(u).to_vec(), z.row(v).to_vec());
                for (d, w) in dz.row_mut(u).iter_mut().zip(&zv) {
                    *d += g * w;
                }
                for (d, w) in dz.row_mut(v).iter_mut().zip(&zu) {
                    *d += g * w;
                }
            }
            *recon += part * scale;
        };
        accumulate(positives, true, &mut recon);
        accumulate(negatives, false, &mut recon);

        let (kl_mean, kl_dmu, kl_dlv) = gaussian_kl(&e.mu, &e.logvar);
        let kl_weight = 1.0 / n as f64;
        let mut d_mu = dz.clone();
        let mut d_lv = Matrix::zeros(n, self.latent);
        for i in 0..n * self.latent {
            let std = (0.5 * e.logvar.as_slice()[i]).exp();
            d_mu.as_mut_slice()[i] += kl_weight * kl_dmu.as_slice()[i];
            d_lv.as_mut_slice()[i] = dz.as_slice()[i] * eps.as_slice()[i] * 0.5 * std
                + kl_weight * kl_dlv.as_slice()[i];
        }

        let mut grad = p.zeros_like();
        grad.set("b_mu", &d_mu.col_sums())?;
        grad.set("b_logvar", &d_lv.col_sums())?;
        let a_dmu = op.spmm_t(&d_mu)?;
        let a_dlv = op.spmm_t(&d_lv)?;
        grad.set("w_mu", e.hidden.matmul_tn(&a_dmu)?.as_slice())?;
        grad.set("w_logvar", e.hidden.matmul_tn(&a_dlv)?.as_slice())?;
        let mut d_hidden = a_dmu.matmul_nt(&p.matrix("w_mu")?)?;
        d_hidden.add_assign(&a_dlv.matmul_nt(&p.matrix("w_logvar")?)?)?;
        let d_pre = relu_backward(&e.pre, &d_hidden)?;
        grad.set("b0", &d_pre.col_sums())?;
        grad.set("w0", x.matmul_tn(&op.spmm_t(&d_pre)?)?.as_slice())?;

        Ok(VgaeLoss {
            total: recon + kl_weight * kl_mean,
            recon,
            kl: kl_mean,
            grad,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn inner_product_decoder() {
        let z0 = Matrix::zeros(2, VGAE_LATENT);
        assert_eq!(VgaeModel::edge_probability(&z0, 0, 1), 0.5);
        let mut z = Matrix::zeros(2, VGAE_LATENT);
        z.set(0, 0, 2.0);
        z.set(1, 0, 2.0);
        assert!((VgaeModel::edge_probability(&z, 0, 1) - 0.982_013_790_037_908_5).abs() < 1e-12);
    }

    #[test]
    fn negatives_avoid_edges() {
        let edges: BTreeSet<_> = [(0, 1), (1, 2)].into_iter().collect();
        let negs = sample_negatives(4, &edges, 50, &mut rng::stream(0, &[]));
        assert_eq!(negs.len(), 50);
        assert!(negs.iter().all(|&(u, v)| u != v && !edges.contains(&(u.min(v), u.max(v)))));
        let complete: BTreeSet<_> = [(0, 1), (0, 2), (1, 2)].into_iter().collect();
        assert!(sample_negatives(3, &complete, 5, &mut rng::stream(0, &[])).is_empty());
    }
}
