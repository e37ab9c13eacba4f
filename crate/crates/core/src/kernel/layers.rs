//! Primitive layers with hand-written backward passes. Each backward takes the
//! upstream gradient and whatever the forward needed, and returns gradients for
//! every input.

use crate::error::{Error, Result};
use crate::kernel::Matrix;

pub struct AffineGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

/// `x · w + b` with `b` broadcast over rows.
pub fn affine_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    out.add_row_vector(b)?;
    Ok(out)
}

pub fn affine_backward(x: &Matrix, w: &Matrix, dout: &Matrix) -> Result<AffineGrads> {
    if dout.shape() != (x.rows(), w.cols()) {
        return Err(Error::shape("affine_backward", dout.shape(), (x.rows(), w.cols())));
    }
    Ok(AffineGrads {
        dx: dout.matmul_nt(w)?,
        dw: x.matmul_tn(dout)?,
        db: dout.col_sums(),
    })
}

/// Parameter gradients only, for layers whose input needs no gradient.
pub fn affine_backward_params(x: &Matrix, dout: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    Ok((x.matmul_tn(dout)?, dout.col_sums()))
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Subgradient at zero is taken as 0.
pub fn relu_backward(x: &Matrix, dout: &Matrix) -> Result<Matrix> {
    if x.shape() != dout.shape() {
        return Err(Error::shape("relu_backward", x.shape(), dout.shape()));
    }
    let data = x
        .as_slice()
        .iter()
        .zip(dout.as_slice())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy of `target` against `sigmoid(logit)`.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub struct SoftmaxXent {
    pub loss: f64,
    pub probs: Matrix,
}

/// Mean cross-entropy over the `(row, class)` targets; rows not listed do not
/// contribute.
pub fn softmax_xent_forward(logits: &Matrix, targets: &[(usize, usize)]) -> Result<SoftmaxXent> {
    if targets.is_empty() {
        return Err(Error::Kernel("softmax_xent: no targets".into()));
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for &(r, y) in targets {
        if r >= logits.rows() || y >= logits.cols() {
            return Err(Error::Kernel(format!(
                "softmax_xent: target ({r}, {y}) outside {}x{}",
                logits.rows(),
                logits.cols()
            )));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    Ok(SoftmaxXent {
        loss: loss / targets.len() as f64,
        probs,
    })
}

pub fn softmax_xent_backward(probs: &Matrix, targets: &[(usize, usize)]) -> Matrix {
    let mut d = Matrix::zeros(probs.rows(), probs.cols());
    let scale = 1.0 / targets.len() as f64;
    for &(r, y) in targets {
        let row = d.row_mut(r);
        for (g, &p) in row.iter_mut().zip(probs.row(r)) {
            *g += p * scale;
        }
        row[y] -= scale;
    }
    d
}
