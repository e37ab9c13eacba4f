//! Non-conformity scores. Smaller means more conforming; a label enters the
//! prediction set when its score is at most the calibrated threshold.

use crate::error::{Error, Result};
use crate::kernel::Matrix;

const SIMPLEX_TOL: f64 = 1e-9;

fn check(probs: &[f64], y: usize) -> Result<()> {
    if y >= probs.len() {
        return Err(Error::Score(format!("label {y} out of range for {} classes", probs.len())));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Score(format!("probabilities do not form a simplex (sum {s})")));
    }
    Ok(())
}

/// Class ids by descending probability, ties by ascending id.
pub fn descending_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// For every class: (1-based rank, mass strictly above it, cumulative mass
/// through it), accumulated in sorted order.
fn ranked_mass(probs: &[f64]) -> Vec<(usize, f64, f64)> {
    let mut out = vec![(0, 0.0, 0.0); probs.len()];
    let mut acc = 0.0;
    for (i, &c) in descending_order(probs).iter().enumerate() {
        let above = acc;
        acc += probs[c];
        out[c] = (i + 1, above, acc);
    }
    out
}

/// Adaptive prediction sets: cumulative sorted mass through `y`; the
/// randomised variant subtracts `u·π_y`.
pub fn score_aps(probs: &[f64], y: usize, randomized: bool, u: f64) -> Result<f64> {
    check(probs, y)?;
    let (_, _, v) = ranked_mass(probs)[y];
    Ok(if randomized { v - u * probs[y] } else { v })
}

/// Regularised APS: `ρ(y) + u·π_y + ν·max(rank(y) − k_reg, 0)` with `ρ` the
/// mass strictly above `y`.
pub fn score_raps(probs: &[f64], y: usize, nu: f64, k_reg: usize, u: f64) -> Result<f64> {
    check(probs, y)?;
    if nu < 0.0 || k_reg < 1 {
        return Err(Error::Score(format!("invalid RAPS regulariser nu={nu} k_reg={k_reg}")));
    }
    let (rank, above, _) = ranked_mass(probs)[y];
    Ok(above + u * probs[y] + nu * rank.saturating_sub(k_reg) as f64)
}

/// Least ambiguous classifier: `1 − π_y`.
pub fn score_lac(probs: &[f64], y: usize) -> Result<f64> {
    check(probs, y)?;
    Ok(1.0 - probs[y])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Aps,
    Raps,
    Lac,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Aps => "aps",
            ScoreKind::Raps => "raps",
            ScoreKind::Lac => "lac",
        }
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aps" => Ok(ScoreKind::Aps),
            "raps" => Ok(ScoreKind::Raps),
            "lac" => Ok(ScoreKind::Lac),
            _ => Err(Error::Config(format!("unknown score `{s}` (aps, raps, lac)"))),
        }
    }
}

/// A configured score function.
///
/// Without randomisation APS uses `u = 0` and RAPS `u = 1`, so both reduce to
/// the cumulative mass through `y` (plus the RAPS penalty).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scorer {
    pub kind: ScoreKind,
    pub randomized: bool,
    pub nu: f64,
    pub k_reg: usize,
}

impl Scorer {
    pub fn new(kind: ScoreKind) -> Self {
        Scorer {
            kind,
            randomized: false,
            nu: 0.01,
            k_reg: 1,
        }
    }

    pub fn randomized(mut self, on: bool) -> Self {
        self.randomized = on;
        self
    }

    pub fn uses_draws(&self) -> bool {
        self.randomized && self.kind != ScoreKind::Lac
    }

    pub fn score(&self, probs: &[f64], y: usize, u: f64) -> Result<f64> {
        match self.kind {
            ScoreKind::Aps => score_aps(probs, y, self.randomized, u),
            ScoreKind::Raps => {
                score_raps(probs, y, self.nu, self.k_reg, if self.randomized { u } else { 1.0 })
            }
            ScoreKind::Lac => score_lac(probs, y),
        }
    }

    /// Scores of every label for one probability row.
    pub fn label_scores(&self, probs: &[f64], u: f64) -> Result<Vec<f64>> {
        check(probs, 0)?;
        if self.kind == ScoreKind::Raps && (self.nu < 0.0 || self.k_reg < 1) {
            return Err(Error::Score(format!(
                "invalid RAPS regulariser nu={} k_reg={}",
                self.nu, self.k_reg
            )));
        }
        let ranked = ranked_mass(probs);
        Ok(ranked
            .iter()
            .zip(probs)
            .map(|(&(rank, above, through), &p)| match self.kind {
                ScoreKind::Aps if self.randomized => through - u * p,
                ScoreKind::Aps => through,
                ScoreKind::Raps => {
                    let u = if self.randomized { u } else { 1.0 };
                    above + u * p + self.nu * rank.saturating_sub(self.k_reg) as f64
                }
                ScoreKind::Lac => 1.0 - p,
            })
            .collect())
    }

    /// True-label scores for selected rows of a probability matrix; `u`
    /// holds one draw per selected row (ignored when not randomised).
    pub fn true_label_scores(&self, probs: &Matrix, rows: &[usize], labels: &[usize], u: &[f64]) -> Result<Vec<f64>> {
        rows.iter()
            .enumerate()
            .map(|(i, &r)| self.score(probs.row(r), labels[r], u.get(i).copied().unwrap_or(0.0)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: [f64; 3] = [0.5, 0.3, 0.2];

    #[test]
    fn aps_examples() {
        assert_eq!(score_aps(&P, 0, false, 0.0).unwrap(), 0.5);
        assert_eq!(score_aps(&P, 1, false, 0.0).unwrap(), 0.8);
        assert!((score_aps(&P, 1, true, 0.5).unwrap() - 0.65).abs() < 1e-15);
        assert!(matches!(score_aps(&P, 3, false, 0.0), Err(Error::Score(_))));
    }

    #[test]
    fn aps_uniform_is_rank_over_l() {
        let u = [0.25; 4];
        for y in 0..4 {
            assert_eq!(score_aps(&u, y, false, 0.0).unwrap(), (y + 1) as f64 / 4.0);
        }
    }

    #[test]
    fn raps_examples() {
        assert!((score_raps(&[0.6, 0.4], 1, 1.0, 1, 0.0).unwrap() - 1.6).abs() < 1e-15);
        // Rank within k_reg: the penalty vanishes.
        assert_eq!(score_raps(&P, 0, 5.0, 1, 0.3).unwrap(), score_raps(&P, 0, 0.0, 1, 0.3).unwrap());
    }

    #[test]
    fn lac_examples() {
        assert!((score_lac(&[0.7, 0.2, 0.1], 0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(score_lac(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert_eq!(score_lac(&[0.25; 4], 2).unwrap(), 0.75);
    }

    #[test]
    fn rejects_non_simplex() {
        assert!(score_lac(&[0.5, 0.4], 0).is_err());
    }

    #[test]
    fn label_scores_agree_with_single_scores() {
        let probs = [0.1, 0.45, 0.05, 0.4];
        for kind in [ScoreKind::Aps, ScoreKind::Raps, ScoreKind::Lac] {
            for randomized in [false, true] {
                let s = Scorer::new(kind).randomized(randomized);
                let all = s.label_scores(&probs, 0.37).unwrap();
                for (y, v) in all.iter().enumerate() {
                    assert_eq!(*v, s.score(&probs, y, 0.37).unwrap());
                }
            }
        }
    }
}
