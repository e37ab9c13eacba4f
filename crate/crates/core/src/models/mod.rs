//! Model architectures with analytic gradients: two-layer GCN and GraphSAGE
//! (mean aggregation) node classifiers, the feature VAE used for prototype
//! generation, the VGAE link predictor, and temperature scaling.

mod gcn;
mod sage;
mod temperature;
mod vae;
mod vgae;

use rand::Rng as _;

pub use gcn::GcnModel;
pub use sage::SageModel;
pub use temperature::{fit_temperature, nll_at_temperature, TEMPERATURE_RANGE};
pub use vae::{Reconstruction, VaeLoss, VaeModel};
pub use vgae::{sample_negatives, VgaeLoss, VgaeModel};

use crate::error::Result;
use crate::kernel::{Matrix, ParamVector, SparseMatrix};
use crate::rng::Rng;

/// A transductive node classifier over a fixed propagation operator.
pub trait NodeClassifier: Send + Sync {
    fn init_params(&self, rng: &mut Rng) -> ParamVector;

    /// Message-passing operator this architecture expects for a graph.
    fn operator(&self, n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix>;

    fn logits(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Matrix>;

    /// Mean cross-entropy over `targets` plus `0.5 * weight_decay * ‖W‖²` on
    /// weight matrices, and its gradient laid out like `p`.
    fn loss_and_grad(
        &self,
        p: &ParamVector,
        op: &SparseMatrix,
        x: &Matrix,
        targets: &[(usize, usize)],
        weight_decay: f64,
    ) -> Result<(f64, ParamVector)>;

    /// Pre-activations of the hidden ReLU layer, for finite-difference checks
    /// that must stay clear of the kink.
    fn hidden_preactivation(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix)
        -> Result<Matrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gcn,
    Sage,
}

impl Architecture {
    pub fn build(self, in_dim: usize, hidden: usize, classes: usize) -> Box<dyn NodeClassifier> {
        match self {
            Architecture::Gcn => Box::new(GcnModel::new(in_dim, hidden, classes)),
            Architecture::Sage => Box::new(SageModel::new(in_dim, hidden, classes)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Gcn => "gcn",
            Architecture::Sage => "sage",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Architecture::Gcn),
            "sage" | "graphsage" => Ok(Architecture::Sage),
            _ => Err(crate::error::Error::Config(format!("unknown model `{s}` (gcn, sage)"))),
        }
    }
}

/// Glorot-uniform matrix.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

pub(crate) fn weight_penalty(p: &ParamVector, names: &[&str], wd: f64, grad: &mut ParamVector) -> Result<f64> {
    if wd == 0.0 {
        return Ok(0.0);
    }
    let mut pen = 0.0;
    for name in names {
        let w = p.slice(name)?;
        pen += 0.5 * wd * w.iter().map(|v| v * v).sum::<f64>();
        for (g, &v) in grad.slice_mut(name)?.iter_mut().zip(w) {
            *g += wd * v;
        }
    }
    Ok(pen)
}

/// Gaussian KL of `N(mu, exp(logvar))` against `N(0, I)`, summed over latent
/// dims and averaged over rows, with gradients.
pub(crate) fn gaussian_kl(mu: &Matrix, logvar: &Matrix) -> (f64, Matrix, Matrix) {
    let rows = mu.rows().max(1) as f64;
    let mut kl = 0.0;
    let mut dmu = Matrix::zeros(mu.rows(), mu.cols());
    let mut dlv = Matrix::zeros(mu.rows(), mu.cols());
    for ((&m, &lv), (gm, gl)) in mu
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .zip(dmu.as_mut_slice().iter_mut().zip(dlv.as_mut_slice().iter_mut()))
    {
        kl += -0.5 * (1.0 + lv - m * m - lv.exp());
        *gm = m / rows;
        *gl = 0.5 * (lv.exp() - 1.0) / rows;
    }
    (kl / rows, dmu, dlv)
}

/// Full-batch Adam training of a classifier; returns the loss before each step.
pub fn train_classifier(
    model: &dyn NodeClassifier,
    params: &mut ParamVector,
    adam: &mut crate::kernel::AdamState,
    op: &SparseMatrix,
    x: &Matrix,
    targets: &[(usize, usize)],
    steps: usize,
    weight_decay: f64,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, grad) = model.loss_and_grad(params, op, x, targets, weight_decay)?;
        crate::kernel::adam_step(params, grad.as_slice(), adam)?;
        losses.push(loss);
    }
    Ok(losses)
}
