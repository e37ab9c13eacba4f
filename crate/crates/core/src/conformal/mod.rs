//! Split conformal prediction across clients: scores, thresholds, sets and
//! their coverage/size metrics.

mod quantile;
mod scores;
mod tdigest;

use rand::Rng as _;

pub use quantile::{conformal_rank, federated_quantile, local_quantile, QuantileMethod, ScoreSet};
pub use scores::{descending_order, score_aps, score_lac, score_raps, ScoreKind, Scorer};
pub use tdigest::{Centroid, TDigestSketch, DEFAULT_COMPRESSION};

use crate::error::{Error, Result};
use crate::kernel::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    /// Included class ids per test row, ascending.
    pub sets: Vec<Vec<usize>>,
    pub qhat: f64,
}

/// Includes label `y` for row `i` iff `score(probs_i, y, u_i) ≤ q̂`.
///
/// `u` supplies one uniform draw per row for randomised scores and may be
/// empty otherwise.
pub fn build_sets(probs: &Matrix, qhat: f64, scorer: &Scorer, u: &[f64]) -> Result<PredictionSet> {
    if scorer.uses_draws() && u.len() != probs.rows() {
        return Err(Error::Score(format!(
            "{} uniform draws for {} rows",
            u.len(),
            probs.rows()
        )));
    }
    let sets = (0..probs.rows())
        .map(|r| {
            let s = scorer.label_scores(probs.row(r), u.get(r).copied().unwrap_or(0.0))?;
            Ok(s.iter()
                .enumerate()
                .filter(|(_, &v)| v <= qhat)
                .map(|(c, _)| c)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(PredictionSet { sets, qhat })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMetrics {
    pub coverage: f64,
    pub inefficiency: f64,
}

pub fn metrics(sets: &PredictionSet, labels: &[usize]) -> Result<SetMetrics> {
    if sets.sets.is_empty() {
        return Err(Error::Metrics("no test rows".into()));
    }
    if sets.sets.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "{} sets for {} labels",
            sets.sets.len(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let covered = sets.sets.iter().zip(labels).filter(|(s, y)| s.contains(y)).count();
    let size: usize = sets.sets.iter().map(Vec::len).sum();
    Ok(SetMetrics {
        coverage: covered as f64 / n,
        inefficiency: size as f64 / n,
    })
}

/// Uniform draws for randomised scores, or nothing.
pub fn uniform_draws(scorer: &Scorer, count: usize, rng: &mut Rng) -> Vec<f64> {
    if scorer.uses_draws() {
        (0..count).map(|_| rng.random::<f64>()).collect()
    } else {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageCheck {
    pub empirical: f64,
    pub lower: f64,
    pub upper: f64,
    pub margin: f64,
    pub within: bool,
}

/// Monte Carlo estimate of `P(s_test ≤ q̂)` for the federated threshold.
///
/// Each trial draws `n_k` calibration scores per client from `sampler`, a
/// test client with probability `(n_k+1)/(N+K)` and one test score from it.
/// The verdict compares against `[1−α, 1−α+K/(N+K)]` widened by three
/// binomial standard errors.
pub fn coverage_bound_check(
    counts: &[usize],
    alpha: f64,
    trials: usize,
    method: QuantileMethod,
    mut sampler: impl FnMut(usize, &mut Rng) -> f64,
    rng: &mut Rng,
) -> Result<CoverageCheck> {
    if trials < 100 {
        return Err(Error::Config(format!("coverage check needs ≥ 100 trials, got {trials}")));
    }
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Config("every client needs calibration scores".into()));
    }
    let k = counts.len();
    let n: usize = counts.iter().sum();
    let mut hits = 0usize;
    for _ in 0..trials {
        let cal: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(c, &m)| (0..m).map(|_| sampler(c, rng)).collect())
            .collect();
        let qhat = federated_quantile(&ScoreSet::from_client_scores(cal)?, alpha, method)?;
        let mut pick = rng.random_range(0..n + k);
        let mut client = 0;
        while pick > counts[client] {
            pick -= counts[client] + 1;
            client += 1;
        }
        if sampler(client, rng) <= qhat {
            hits += 1;
        }
    }
    let c = hits as f64 / trials as f64;
    let margin = 3.0 * (c * (1.0 - c) / trials as f64).sqrt();
    let lower = 1.0 - alpha;
    let upper = 1.0 - alpha + k as f64 / (n + k) as f64;
    Ok(CoverageCheck {
        empirical: c,
        lower,
        upper,
        margin,
        within: c >= lower - margin && c <= upper + margin,
    })
}
