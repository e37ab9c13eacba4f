use crate::error::{Error, Result};
use crate::kernel::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `p` in place.
pub fn adam_step(p: &mut ParamVector, grad: &[f64], s: &mut AdamState) -> Result<()> {
    if grad.len() != p.len() || s.m.len() != p.len() || s.v.len() != p.len() {
        return Err(Error::Kernel(format!(
            "adam: parameter length {} but gradient {} / moments {}",
            p.len(),
            grad.len(),
            s.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Optimizer {
            slice: p.slice_name_at(i).unwrap_or("?").to_string(),
        });
    }
    s.t += 1;
    let bc1 = 1.0 - s.beta1.powi(s.t as i32);
    let bc2 = 1.0 - s.beta2.powi(s.t as i32);
    let params = p.as_mut_slice();
    for i in 0..params.len() {
        let g = grad[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        let m_hat = s.m[i] / bc1;
        let v_hat = s.v[i] / bc2;
        params[i] -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
    }
    assert!(
        params.iter().all(|x| x.is_finite()),
        "adam produced non-finite parameters"
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParamVector {
        let mut p = ParamVector::new();
        p.push("w", &[1], &[v]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(1.5);
        let mut s = AdamState::new(1, 0.01);
        adam_step(&mut p, &[0.0], &mut s).unwrap();
        assert_eq!(p.as_slice(), &[1.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let mut p = scalar(0.0);
        let mut s = AdamState::new(1, 0.01);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((p.as_slice()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_slice() {
        let mut p = scalar(0.0);
        p.push("bias", &[2], &[0.0, 0.0]).unwrap();
        let mut s = AdamState::new(3, 0.01);
        match adam_step(&mut p, &[0.0, 0.0, f64::NAN], &mut s) {
            Err(Error::Optimizer { slice }) => assert_eq!(slice, "bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.t, 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = scalar(0.3);
            let mut s = AdamState::new(1, 0.01);
            for k in 0..50 {
                adam_step(&mut p, &[(k as f64).sin()], &mut s).unwrap();
            }
            p.as_slice()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
