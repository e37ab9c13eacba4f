use crate::error::{Error, Result};
use crate::kernel::layers::{relu_backward, relu_forward, softmax_xent_backward, softmax_xent_forward};
use crate::kernel::{Matrix, ParamVector, SparseMatrix};
use crate::models::{glorot, weight_penalty, NodeClassifier};
use crate::rng::Rng;

/// GraphSAGE with mean aggregation. Each layer computes
/// `[h_v ‖ mean_{u∈N(v)} h_u] · W + b`; the top half of `W` acts on the node
/// itself and the bottom half on the neighbour mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SageModel {
    pub in_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

struct Cache {
    pre: Matrix,
    hidden: Matrix,
    logits: Matrix,
}

fn split(w: &Matrix, half: usize) -> (Matrix, Matrix) {
    (w.row_block(0, half), w.row_block(half, 2 * half))
}

impl SageModel {
    pub fn new(in_dim: usize, hidden: usize, classes: usize) -> Self {
        assert!(hidden > 0, "hidden width must be positive");
        SageModel {
            in_dim,
            hidden,
            classes,
        }
    }

    fn layer(op: &SparseMatrix, h: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
        let (w_self, w_neigh) = split(w, h.cols());
        let mut out = h.matmul(&w_self)?;
        out.add_assign(&op.spmm(&h.matmul(&w_neigh)?)?)?;
        out.add_row_vector(b)?;
        Ok(out)
    }

    /// Returns `(dh, dw, db)` for one layer; `dh` only when asked, since for
    /// the input layer it is a dense n×h×d product nobody reads.
    fn layer_backward(
        op: &SparseMatrix,
        h: &Matrix,
        w: &Matrix,
        dout: &Matrix,
        want_dh: bool,
    ) -> Result<(Option<Matrix>, Matrix, Vec<f64>)> {
        let (w_self, w_neigh) = split(w, h.cols());
        let d_agg = op.spmm_t(dout)?;
        let dw = h.matmul_tn(dout)?.vstack(&h.matmul_tn(&d_agg)?)?;
        let dh = if want_dh {
            let mut dh = dout.matmul_nt(&w_self)?;
            dh.add_assign(&d_agg.matmul_nt(&w_neigh)?)?;
            Some(dh)
        } else {
            None
        };
        Ok((dh, dw, dout.col_sums()))
    }

    fn forward(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Cache> {
        if x.cols() != self.in_dim || x.rows() != op.n() {
            return Err(Error::Model(format!(
                "sage expects {}x{} features, got {}x{}",
                op.n(),
                self.in_dim,
                x.rows(),
                x.cols()
            )));
        }
        let pre = Self::layer(op, x, &p.matrix("w0")?, p.slice("b0")?)?;
        let hidden = relu_forward(&pre);
        let logits = Self::layer(op, &hidden, &p.matrix("w1")?, p.slice("b1")?)?;
        Ok(Cache {
            pre,
            hidden,
            logits,
        })
    }
}

impl NodeClassifier for SageModel {
    fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut p = ParamVector::new();
        let w0 = glorot(self.in_dim, self.hidden, rng).vstack(&glorot(self.in_dim, self.hidden, rng));
        let w1 = glorot(self.hidden, self.classes, rng).vstack(&glorot(self.hidden, self.classes, rng));
        p.push_matrix("w0", &w0.unwrap()).unwrap();
        p.push("b0", &[self.hidden], &vec![0.0; self.hidden]).unwrap();
        p.push_matrix("w1", &w1.unwrap()).unwrap();
        p.push("b1", &[self.classes], &vec![0.0; self.classes]).unwrap();
        p
    }

    fn operator(&self, n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
        SparseMatrix::mean_aggregator(n, edges)
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
        let (d_hidden, dw1, db1) = Self::layer_backward(op, &c.hidden, &p.matrix("w1")?, &dlogits, true)?;
        grad.set("w1", dw1.as_slice())?;
        grad.set("b1", &db1)?;
        let d_pre = relu_backward(&c.pre, &d_hidden.expect("requested"))?;
        let (_, dw0, db0) = Self::layer_backward(op, x, &p.matrix("w0")?, &d_pre, false)?;
        grad.set("w0", dw0.as_slice())?;
        grad.set("b0", &db0)?;

        let pen = weight_penalty(p, &["w0", "w1"], weight_decay, &mut grad)?;
        Ok((xent.loss + pen, grad))
    }

    fn hidden_preactivation(&self, p: &ParamVector, op: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(p, op, x)?.pre)
    }
}
