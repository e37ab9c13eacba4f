//! Calibration thresholds from scores spread over clients.
//!
//! With `N` calibration scores over `K` clients the threshold is the
//! `⌈(1−α)(N+K)⌉`-th smallest score: one unseen test point per client is
//! treated as `+∞`. When that rank exceeds `N` the threshold is `+∞` and every
//! prediction set is the full label set.

use crate::conformal::tdigest::{TDigestSketch, DEFAULT_COMPRESSION};
use crate::error::{Error, Result};

/// Calibration scores grouped by client: `(node id, score)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    clients: Vec<Vec<(usize, f64)>>,
}

impl ScoreSet {
    pub fn new(num_clients: usize) -> Self {
        ScoreSet {
            clients: vec![Vec::new(); num_clients],
        }
    }

    pub fn from_client_scores(scores: Vec<Vec<f64>>) -> Result<Self> {
        let mut s = ScoreSet::new(scores.len());
        for (k, vals) in scores.into_iter().enumerate() {
            for (i, v) in vals.into_iter().enumerate() {
                s.push(k, i, v)?;
            }
        }
        Ok(s)
    }

    pub fn push(&mut self, client: usize, node: usize, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Score(format!("non-finite score for node {node}")));
        }
        let Some(c) = self.clients.get_mut(client) else {
            return Err(Error::Score(format!("client {client} out of range")));
        };
        c.push((node, score));
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    pub fn client_scores(&self, k: usize) -> Vec<f64> {
        self.clients[k].iter().map(|e| e.1).collect()
    }

    pub fn entries(&self, k: usize) -> &[(usize, f64)] {
        &self.clients[k]
    }

    /// Reorders one client's entries.
    pub fn permute_client(&mut self, k: usize, perm: &[usize]) -> Result<()> {
        let c = &self.clients[k];
        if perm.len() != c.len() {
            return Err(Error::Score(format!("permutation of length {} for {} entries", perm.len(), c.len())));
        }
        self.clients[k] = perm.iter().map(|&i| c[i]).collect();
        Ok(())
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Federation("score set has no clients".into()));
        }
        if let Some(k) = self.clients.iter().position(Vec::is_empty) {
            return Err(Error::Federation(format!("client {k} has no calibration scores")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileMethod {
    /// Pooled order statistic over all clients.
    Exact,
    /// Weighted mean of per-client order statistics.
    #[serde(rename = "avg")]
    Averaging,
    /// Merged per-client t-digests.
    TDigest,
}

impl QuantileMethod {
    pub fn name(self) -> &'static str {
        match self {
            QuantileMethod::Exact => "exact",
            QuantileMethod::Averaging => "avg",
            QuantileMethod::TDigest => "tdigest",
        }
    }
}

impl std::str::FromStr for QuantileMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(QuantileMethod::Exact),
            "avg" | "averaging" => Ok(QuantileMethod::Averaging),
            "tdigest" => Ok(QuantileMethod::TDigest),
            _ => Err(Error::Config(format!("unknown quantile method `{s}` (avg, tdigest, exact)"))),
        }
    }
}

/// `⌈(1−α)(n + k)⌉`, guarded against representation error in the product.
pub fn conformal_rank(n: usize, k: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * (n + k) as f64;
    (x - 1e-9).ceil().max(1.0) as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha {alpha} outside (0, 1)")))
    }
}

/// `r`-th smallest (1-based) of `values`.
fn order_statistic(values: &[f64], r: usize) -> f64 {
    let mut v = values.to_vec();
    let (_, x, _) = v.select_nth_unstable_by(r - 1, f64::total_cmp);
    *x
}

/// Classical split-conformal threshold for a single calibration set.
pub fn local_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::Federation("empty calibration set".into()));
    }
    let r = conformal_rank(scores.len(), 1, alpha);
    Ok(if r > scores.len() {
        f64::INFINITY
    } else {
        order_statistic(scores, r)
    })
}

pub fn federated_quantile(scores: &ScoreSet, alpha: f64, method: QuantileMethod) -> Result<f64> {
    check_alpha(alpha)?;
    scores.check_nonempty()?;
    let k = scores.num_clients();
    let n = scores.total();
    let rank = conformal_rank(n, k, alpha);
    // The pooled rule ranks against N+K slots with the K test placeholders at
    // +∞; averaging caps each local level at 1 instead and stays finite.
    if rank > n && method != QuantileMethod::Averaging {
        return Ok(f64::INFINITY);
    }
    match method {
        QuantileMethod::Exact => {
            let all: Vec<f64> = (0..k).flat_map(|c| scores.client_scores(c)).collect();
            Ok(order_statistic(&all, rank))
        }
        QuantileMethod::Averaging => {
            let denom = (n + k) as f64;
            let locals: Vec<(f64, f64)> = (0..k)
                .map(|c| {
                    let s = scores.client_scores(c);
                    let r = conformal_rank(s.len(), 1, alpha).min(s.len());
                    ((s.len() + 1) as f64 / denom, order_statistic(&s, r))
                })
                .collect();
            // Offsets from the first local quantile keep identical clients exact.
            let base = locals[0].1;
            Ok(base + locals.iter().map(|(p, q)| p * (q - base)).sum::<f64>())
        }
        QuantileMethod::TDigest => {
            let mut merged = TDigestSketch::empty(DEFAULT_COMPRESSION);
            for c in 0..k {
                merged = merged.merge(&TDigestSketch::from_values(&scores.client_scores(c), DEFAULT_COMPRESSION)?);
            }
            merged.quantile(rank as f64 / (n + k) as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_example() {
        let s = ScoreSet::from_client_scores(vec![vec![0.3, 0.1, 0.4, 0.2]]).unwrap();
        assert_eq!(federated_quantile(&s, 0.25, QuantileMethod::Exact).unwrap(), 0.4);
    }

    #[test]
    fn rank_beyond_n_is_infinite_unless_averaging() {
        let s = ScoreSet::from_client_scores(vec![vec![0.1, 0.2], vec![0.3]]).unwrap();
        for m in [QuantileMethod::Exact, QuantileMethod::TDigest] {
            assert_eq!(federated_quantile(&s, 0.1, m).unwrap(), f64::INFINITY);
        }
        // capped local quantiles 0.2 and 0.3 with weights 3/5 and 2/5
        let avg = federated_quantile(&s, 0.1, QuantileMethod::Averaging).unwrap();
        assert!((avg - 0.24).abs() < 1e-12, "{avg}");
    }

    #[test]
    fn rank_is_robust_to_rounding() {
        // (1 - 0.45) * 100 evaluates to 55.00000000000001.
        assert_eq!(conformal_rank(99, 1, 0.45), 55);
        assert_eq!(conformal_rank(3, 1, 0.25), 3);
    }

    #[test]
    fn empty_client_is_rejected() {
        let s = ScoreSet::from_client_scores(vec![vec![0.1], vec![]]).unwrap();
        assert!(matches!(federated_quantile(&s, 0.1, QuantileMethod::Exact), Err(Error::Federation(_))));
    }

    #[test]
    fn averaging_identical_clients() {
        let c = vec![0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.6, 0.4, 0.8, 0.05];
        let s = ScoreSet::from_client_scores(vec![c.clone(), c.clone(), c.clone()]).unwrap();
        let local = order_statistic(&c, conformal_rank(10, 1, 0.2));
        assert_eq!(federated_quantile(&s, 0.2, QuantileMethod::Averaging).unwrap(), local);
    }
}
