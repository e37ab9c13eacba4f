use crate::error::{Error, Result};
use crate::kernel::Matrix;

pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 10.0);

/// Mean negative log-likelihood of `softmax(logits / t)`.
pub fn nll_at_temperature(logits: &Matrix, labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = max + row.iter().map(|v| (v / t - max).exp()).sum::<f64>().ln();
        total += lse - row[y] / t;
    }
    total / labels.len() as f64
}

/// Temperature minimising validation NLL over [`TEMPERATURE_RANGE`].
///
/// The NLL is convex in the inverse temperature, so a golden-section search on
/// `1/t` finds the global minimum. A single-class validation set gives no
/// signal about calibration and yields `t = 1`.
pub fn fit_temperature(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || logits.rows() != labels.len() {
        return Err(Error::Model(format!(
            "temperature fit needs matching logits and labels, got {} rows and {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        log::info!("temperature: single-class validation set, using T = 1");
        return Ok(1.0);
    }
    let f = |inv: f64| nll_at_temperature(logits, labels, 1.0 / inv);
    let (mut a, mut b) = (1.0 / TEMPERATURE_RANGE.1, 1.0 / TEMPERATURE_RANGE.0);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let t = 2.0 / (a + b);
    Ok(if f(1.0 / t) <= f(1.0) { t } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_gives_unit_temperature() {
        let logits = Matrix::from_rows(&[vec![1.0, 0.0], vec![3.0, -1.0]]).unwrap();
        assert_eq!(fit_temperature(&logits, &[0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(fit_temperature(&Matrix::zeros(0, 2), &[]).is_err());
    }
}
