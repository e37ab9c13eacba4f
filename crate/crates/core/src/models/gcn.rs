use crate::error::{Error, Result};
use crate::kernel::layers::{relu_backward, relu_forward, softmax_xent_backward, softmax_xent_forward};
use crate::kernel::{Matrix, ParamVector, SparseMatrix};
use crate::models::{glorot, weight_penalty, NodeClassifier};
use crate::rng::Rng;

/// `logits = Â · ReLU(Â X W0 + b0) · W1 + b1` with
/// `Â = D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnModel {
    pub in_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

struct Cache {
    pre: Matrix,
    hidden: Matrix,
    logits: Matrix,
}

impl GcnModel {
    pub fn new(in_dim: usize, hidden: usize, classes: usize) -> Self {
        assert!(hidden > 0, "hidden width must be positive");
        GcnModel {
            in_dim,
            hidden,
            classes,
        }
    }

    fn check(&self, op: &SparseMatrix, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim || x.rows() != op.n() {
            return Err(Error::Model(format!(
                "gcn expects {}x{} features, got {}x{}",
                op.n(),
                self.in_dim,
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn forward(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Cache> {
        self.check(op, x)?;
        let mut pre = op.spmm(&x.matmul(&p.matrix("w0")?)?)?;
        pre.add_row_vector(p.slice("b0")?)?;
        let hidden = relu_forward(&pre);
        let mut logits = op.spmm(&hidden.matmul(&p.matrix("w1")?)?)?;
        logits.add_row_vector(p.slice("b1")?)?;
        Ok(Cache {
            pre,
            hidden,
            logits,
        })
    }
}

impl NodeClassifier for GcnModel {
    fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut p = ParamVector::new();
        p.push_matrix("w0", &glorot(self.in_dim, self.hidden, rng)).unwrap();
        p.push("b0", &[self.hidden], &vec![0.0; self.hidden]).unwrap();
        p.push_matrix("w1", &glorot(self.hidden, self.classes, rng)).unwrap();
        p.push("b1", &[self.classes], &vec![0.0; self.classes]).unwrap();
        p
    }

    fn operator(&self, n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
        SparseMatrix::gcn_normalized(n, edges)
    }

    fn logits(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(p, op, x)?.logits)
    }

    fn loss_and_grad(
        &self,
        p: &ParamVector,
        op: &SparseMatrix,
        x: &Matrix,
        targets: &[(usize, usize)],
        weight_decay: f64,
    ) -> Result<(f64, ParamVector)> {
        let c = self.forward(p, op, x)?;
        let xent = softmax_xent_forward(&c.logits, targets)?;
        let dlogits = softmax_xent_backward(&xent.probs, targets);

        let mut grad = p.zeros_like();
        grad.set("b1", &dlogits.col_sums())?;
        let d_hw1 = op.spmm_t(&dlogits)?;
        grad.set("w1", c.hidden.matmul_tn(&d_hw1)?.as_slice())?;
        let d_hidden = d_hw1.matmul_nt(&p.matrix("w1")?)?;
        let d_pre = relu_backward(&c.pre, &d_hidden)?;
        grad.set("b0", &d_pre.col_sums())?;
        let d_xw0 = op.spmm_t(&d_pre)?;
        grad.set("w0", x.matmul_tn(&d_xw0)?.as_slice())?;

        let pen = weight_penalty(p, &["w0", "w1"], weight_decay, &mut grad)?;
        Ok((xent.loss + pen, grad))
    }

    fn hidden_preactivation(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(p, op, x)?.pre)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::layers::relu_forward;
    use crate::rng;

    #[test]
    fn edgeless_graph_reduces_to_mlp() {
        let m = GcnModel::new(3, 4, 2);
        let p = m.init_params(&mut rng::stream(1, &[]));
        let x = Matrix::from_rows(&[vec![1.0, -0.5, 2.0], vec![0.0, 0.3, -1.0]]).unwrap();
        let op = m.operator(2, &[]).unwrap();
        let got = m.logits(&p, &op, &x).unwrap();
        let mut h = x.matmul(&p.matrix("w0").unwrap()).unwrap();
        h.add_row_vector(p.slice("b0").unwrap()).unwrap();
        let mut want = relu_forward(&h).matmul(&p.matrix("w1").unwrap()).unwrap();
        want.add_row_vector(p.slice("b1").unwrap()).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let m = GcnModel::new(3, 4, 2);
        let p = m.init_params(&mut rng::stream(1, &[]));
        let op = m.operator(2, &[(0, 1)]).unwrap();
        assert!(matches!(m.logits(&p, &op, &Matrix::zeros(2, 5)), Err(Error::Model(_))));
    }
}
