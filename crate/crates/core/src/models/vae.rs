//! Feature VAE with a KL sparsity penalty on the mean latent activation.
//!
//! Encoder `d → 64 → (μ, log σ²) ∈ R^{d′}`, decoder mirrors it `d′ → 64 → d`.
//! The loss is `λ_rec·L_rec + λ_kl·L_kl + β·L_sparse` where
//! `L_sparse = Σ_i KL(Bernoulli(ρ) ‖ Bernoulli(ρ̂_i))` and `ρ̂_i` is the batch
//! mean of `σ(μ_{·,i})`.

use crate::error::{Error, Result};
use crate::kernel::layers::{
    affine_backward, affine_backward_params, affine_forward, relu_backward, relu_forward, sigmoid,
};
use crate::kernel::{Matrix, ParamVector};
use crate::models::{gaussian_kl, glorot};
use crate::rng::Rng;

pub const VAE_HIDDEN: usize = 64;
const RHO_HAT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    /// Binary cross-entropy on logits; for `{0, 1}` features.
    Bernoulli,
    /// Squared error summed over features.
    Gaussian,
}

impl Reconstruction {
    pub fn detect(x: &Matrix) -> Self {
        if x.as_slice().iter().all(|&v| v == 0.0 || v == 1.0) {
            Reconstruction::Bernoulli
        } else {
            Reconstruction::Gaussian
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeModel {
    pub in_dim: usize,
    pub latent: usize,
    pub rho: f64,
    pub beta: f64,
    pub lambda_rec: f64,
    pub lambda_kl: f64,
    pub recon: Reconstruction,
}

#[derive(Debug, Clone)]
pub struct VaeLoss {
    pub total: f64,
    pub rec: f64,
    pub kl: f64,
    pub sparse: f64,
    pub grad: ParamVector,
}

/// Bernoulli KL `ρ ln(ρ/ρ̂) + (1-ρ) ln((1-ρ)/(1-ρ̂))`.
pub fn bernoulli_kl(rho: f64, rho_hat: f64) -> f64 {
    rho * (rho / rho_hat).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - rho_hat)).ln()
}

struct Forward {
    h1_pre: Matrix,
    h1: Matrix,
    mu: Matrix,
    logvar: Matrix,
    z: Matrix,
    d1_pre: Matrix,
    d1: Matrix,
    out: Matrix,
}

impl VaeModel {
    pub fn new(in_dim: usize, latent: usize, recon: Reconstruction) -> Result<Self> {
        if latent == 0 || latent >= in_dim {
            return Err(Error::Model(format!(
                "latent dim {latent} must be in 1..{in_dim}"
            )));
        }
        Ok(VaeModel {
            in_dim,
            latent,
            rho: 0.1,
            beta: 0.01,
            lambda_rec: 1.0,
            lambda_kl: 1.0,
            recon,
        })
    }

    pub fn with_sparsity(mut self, rho: f64, beta: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || beta < 0.0 {
            return Err(Error::Model(format!("invalid sparsity target {rho} / weight {beta}")));
        }
        self.rho = rho;
        self.beta = beta;
        Ok(self)
    }

    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut p = ParamVector::new();
        let dims = [
            ("enc1", self.in_dim, VAE_HIDDEN),
            ("enc_mu", VAE_HIDDEN, self.latent),
            ("enc_logvar", VAE_HIDDEN, self.latent),
            ("dec1", self.latent, VAE_HIDDEN),
            ("dec_out", VAE_HIDDEN, self.in_dim),
        ];
        for (name, r, c) in dims {
            p.push_matrix(&format!("{name}_w"), &glorot(r, c, rng)).unwrap();
            p.push(&format!("{name}_b"), &[c], &vec![0.0; c]).unwrap();
        }
        p
    }

    fn encode(&self, p: &ParamVector, x: &Matrix) -> Result<(Matrix, Matrix, Matrix, Matrix)> {
        if x.cols() != self.in_dim {
            return Err(Error::Model(format!(
                "vae expects {} features, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        let h1_pre = affine_forward(x, &p.matrix("enc1_w")?, p.slice("enc1_b")?)?;
        let h1 = relu_forward(&h1_pre);
        let mu = affine_forward(&h1, &p.matrix("enc_mu_w")?, p.slice("enc_mu_b")?)?;
        let logvar = affine_forward(&h1, &p.matrix("enc_logvar_w")?, p.slice("enc_logvar_b")?)?;
        Ok((h1_pre, h1, mu, logvar))
    }

    fn decode_logits(&self, p: &ParamVector, z: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let d1_pre = affine_forward(z, &p.matrix("dec1_w")?, p.slice("dec1_b")?)?;
        let d1 = relu_forward(&d1_pre);
        let out = affine_forward(&d1, &p.matrix("dec_out_w")?, p.slice("dec_out_b")?)?;
        Ok((d1_pre, d1, out))
    }

    fn forward(&self, p: &ParamVector, x: &Matrix, eps: &Matrix) -> Result<Forward> {
        let (h1_pre, h1, mu, logvar) = self.encode(p, x)?;
        if eps.shape() != mu.shape() {
            return Err(Error::shape("vae noise", eps.shape(), mu.shape()));
        }
        let mut z = mu.clone();
        for ((zv, &lv), &e) in z
            .as_mut_slice()
            .iter_mut()
            .zip(logvar.as_slice())
            .zip(eps.as_slice())
        {
            *zv += (0.5 * lv).exp() * e;
        }
        let (d1_pre, d1, out) = self.decode_logits(p, &z)?;
        Ok(Forward {
            h1_pre,
            h1,
            mu,
            logvar,
            z,
            d1_pre,
            d1,
            out,
        })
    }

    /// Latent means `μ = q_φ(x)`.
    pub fn encode_mean(&self, p: &ParamVector, x: &Matrix) -> Result<Matrix> {
        Ok(self.encode(p, x)?.2)
    }

    /// Deterministic reconstruction `p_θ(μ(x))`: probabilities for Bernoulli
    /// features, raw outputs for Gaussian ones.
    pub fn reconstruct(&self, p: &ParamVector, x: &Matrix) -> Result<Matrix> {
        let mu = self.encode_mean(p, x)?;
        let (_, _, out) = self.decode_logits(p, &mu)?;
        Ok(match self.recon {
            Reconstruction::Bernoulli => out.map(sigmoid),
            Reconstruction::Gaussian => out,
        })
    }

    /// Loss and gradient on a batch with caller-supplied reparameterisation
    /// noise `eps` (`batch × latent`).
    pub fn loss(&self, p: &ParamVector, x: &Matrix, eps: &Matrix) -> Result<VaeLoss> {
        let b = x.rows();
        if b == 0 {
            return Err(Error::Model("empty VAE batch".into()));
        }
        let f = self.forward(p, x, eps)?;
        let bf = b as f64;

        // Reconstruction.
        let mut rec = 0.0;
        let mut d_out = Matrix::zeros(b, self.in_dim);
        for ((&o, &t), g) in f
            .out
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .zip(d_out.as_mut_slice())
        {
            match self.recon {
                Reconstruction::Bernoulli => {
                    // One exponential serves both the loss and σ(o).
                    let e = (-o.abs()).exp();
                    rec += o.max(0.0) + e.ln_1p() - t * o;
                    let s = if o >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                    *g = self.lambda_rec * (s - t) / bf;
                }
                Reconstruction::Gaussian => {
                    rec += (o - t) * (o - t);
                    *g = self.lambda_rec * 2.0 * (o - t) / bf;
                }
            }
        }
        rec /= bf;

        // Decoder backward to z.
        let g_out = affine_backward(&f.d1, &p.matrix("dec_out_w")?, &d_out)?;
        let d_d1_pre = relu_backward(&f.d1_pre, &g_out.dx)?;
        let g_dec1 = affine_backward(&f.z, &p.matrix("dec1_w")?, &d_d1_pre)?;
        let dz = g_dec1.dx;

        // Reparameterisation: z = μ + exp(lv/2)·ε.
        let mut d_mu = dz.clone();
        let mut d_lv = Matrix::zeros(b, self.latent);
        for i in 0..b * self.latent {
            let std = (0.5 * f.logvar.as_slice()[i]).exp();
            d_lv.as_mut_slice()[i] = dz.as_slice()[i] * eps.as_slice()[i] * 0.5 * std;
        }

        let (kl, kl_dmu, kl_dlv) = gaussian_kl(&f.mu, &f.logvar);
        for (g, k) in d_mu.as_mut_slice().iter_mut().zip(kl_dmu.as_slice()) {
            *g += self.lambda_kl * k;
        }
        for (g, k) in d_lv.as_mut_slice().iter_mut().zip(kl_dlv.as_slice()) {
            *g += self.lambda_kl * k;
        }

        // Sparsity on ρ̂_i = mean_b σ(μ_{b,i}).
        let mut sparse = 0.0;
        for i in 0..self.latent {
            let raw: f64 = (0..b).map(|r| sigmoid(f.mu.get(r, i))).sum::<f64>() / bf;
            let clamped = raw.clamp(RHO_HAT_CLAMP, 1.0 - RHO_HAT_CLAMP);
            if clamped != raw {
                log::debug!("vae: mean activation {raw} of latent {i} clamped");
            }
            sparse += bernoulli_kl(self.rho, clamped);
            if self.beta == 0.0 || clamped != raw {
                continue;
            }
            let d_rho_hat = -self.rho / clamped + (1.0 - self.rho) / (1.0 - clamped);
            for r in 0..b {
                let s = sigmoid(f.mu.get(r, i));
                let g = d_mu.get(r, i) + self.beta * d_rho_hat * s * (1.0 - s) / bf;
                d_mu.set(r, i, g);
            }
        }

        // Encoder backward.
        let g_mu = affine_backward(&f.h1, &p.matrix("enc_mu_w")?, &d_mu)?;
        let g_lv = affine_backward(&f.h1, &p.matrix("enc_logvar_w")?, &d_lv)?;
        let mut d_h1 = g_mu.dx;
        d_h1.add_assign(&g_lv.dx)?;
        let d_h1_pre = relu_backward(&f.h1_pre, &d_h1)?;
        let (enc1_dw, enc1_db) = affine_backward_params(x, &d_h1_pre)?;

        let mut grad = p.zeros_like();
        grad.set("enc1_w", enc1_dw.as_slice())?;
        grad.set("enc1_b", &enc1_db)?;
        grad.set("enc_mu_w", g_mu.dw.as_slice())?;
        grad.set("enc_mu_b", &g_mu.db)?;
        grad.set("enc_logvar_w", g_lv.dw.as_slice())?;
        grad.set("enc_logvar_b", &g_lv.db)?;
        grad.set("dec1_w", g_dec1.dw.as_slice())?;
        grad.set("dec1_b", &g_dec1.db)?;
        grad.set("dec_out_w", g_out.dw.as_slice())?;
        grad.set("dec_out_b", &g_out.db)?;

        Ok(VaeLoss {
            total: self.lambda_rec * rec + self.lambda_kl * kl + self.beta * sparse,
            rec,
            kl,
            sparse,
            grad,
        })
    }

    /// Minimum |pre-activation| over both ReLU layers, for kink-free
    /// finite-difference checks.
    pub fn min_abs_preactivation(&self, p: &ParamVector, x: &Matrix, eps: &Matrix) -> Result<f64> {
        let f = self.forward(p, x, eps)?;
        Ok(f.h1_pre
            .as_slice()
            .iter()
            .chain(f.d1_pre.as_slice())
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsity_kl_examples() {
        assert_eq!(bernoulli_kl(0.5, 0.5), 0.0);
        let want = 0.2 * (0.2f64 / 0.8).ln() + 0.8 * (0.8f64 / 0.2).ln();
        assert!((bernoulli_kl(0.2, 0.8) - want).abs() < 1e-15);
        assert!((bernoulli_kl(0.2, 0.8) - 0.8318).abs() < 1e-4);
    }

    #[test]
    fn latent_must_be_smaller_than_input() {
        assert!(VaeModel::new(8, 8, Reconstruction::Gaussian).is_err());
        assert!(VaeModel::new(8, 4, Reconstruction::Gaussian).is_ok());
    }

    #[test]
    fn detects_binary_features() {
        let bin = Matrix::from_vec(1, 3, vec![0.0, 1.0, 1.0]).unwrap();
        let real = Matrix::from_vec(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(Reconstruction::detect(&bin), Reconstruction::Bernoulli);
        assert_eq!(Reconstruction::detect(&real), Reconstruction::Gaussian);
    }
}
