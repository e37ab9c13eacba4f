//! In-process federated training: FedAvg aggregation, the communication
//! ledger, and DP-SGD for locally trained generators.
//!
//! Clients train independently between synchronisation barriers. Each client
//! owns a random stream derived from `(seed, round, client)` and aggregation
//! sums in client-id order, so serial and concurrent schedules produce
//! bitwise-identical global parameters.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::ParamVector;
use crate::rng::{self, Rng};

/// How client parameter vectors are weighted in FedAvg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `n_k / Σ n_j`.
    Samples,
    /// `1 / K` over participating clients.
    Uniform,
}

/// Weighted average of client parameters, summed in slice order as offsets
/// from the first participating client, so identical clients come back
/// bit-for-bit.
///
/// Clients with weight zero are left out; negative or non-finite weights and
/// registry mismatches are errors.
pub fn fedavg_aggregate(params: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if params.is_empty() || params.len() != weights.len() {
        return Err(Error::Federation(format!(
            "{} parameter vectors with {} weights",
            params.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Federation(format!("invalid client weight {w}")));
    }
    let first = &params[0];
    if let Some(k) = params.iter().position(|p| !p.same_layout(first)) {
        return Err(Error::Federation(format!(
            "client {k} parameter registry differs from client 0"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Federation("all client weights are zero".into()));
    }
    let base = &params[weights.iter().position(|&w| w > 0.0).expect("positive total")];
    let mut acc = vec![0.0; base.len()];
    for (p, &w) in params.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let share = w / total;
        for ((a, &v), &b) in acc.iter_mut().zip(p.as_slice()).zip(base.as_slice()) {
            *a += share * (v - b);
        }
    }
    let mut out = base.clone();
    for (o, a) in out.as_mut_slice().iter_mut().zip(acc) {
        *o += a;
    }
    Ok(out)
}

/// Scalars exchanged between clients and server, per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct CommsLedger {
    pub model_up: u64,
    pub model_down: u64,
    pub proto_up: u64,
    pub proto_down: u64,
    pub rounds: u64,
}

impl CommsLedger {
    /// One FedAvg round: every participating client downloads and uploads a
    /// full parameter vector.
    pub fn record_model_round(&mut self, participants: usize, param_len: usize) {
        let n = (participants * param_len) as u64;
        self.model_down += n;
        self.model_up += n;
        self.rounds += 1;
    }

    /// Prototype sharing: each client uploads its `M_k × d` centres and the
    /// server broadcasts the concatenated set once.
    pub fn record_prototypes(&mut self, counts: &[usize], dim: usize) {
        let n = (counts.iter().sum::<usize>() * dim) as u64;
        self.proto_up += n;
        self.proto_down += n;
    }

    pub fn model_total(&self) -> u64 {
        self.model_up + self.model_down
    }

    pub fn proto_total(&self) -> u64 {
        self.proto_up + self.proto_down
    }

    pub fn total(&self) -> u64 {
        self.model_total() + self.proto_total()
    }

    pub fn merge(&mut self, other: &CommsLedger) {
        self.model_up += other.model_up;
        self.model_down += other.model_down;
        self.proto_up += other.proto_up;
        self.proto_down += other.proto_down;
        self.rounds += other.rounds;
    }
}

/// Client-side work between two barriers.
pub trait LocalTrainer: Sync {
    /// Per-client optimiser state, kept across rounds.
    type State: Send;

    fn num_clients(&self) -> usize;

    /// FedAvg weight `n_k`; zero means the client sits the run out.
    fn samples(&self, client: usize) -> usize;

    fn init_state(&self, client: usize, global: &ParamVector) -> Self::State;

    /// Trains `params` (a copy of the current global model) in place.
    fn train_round(
        &self,
        client: usize,
        params: &mut ParamVector,
        state: &mut Self::State,
        rng: &mut Rng,
    ) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedSchedule {
    pub rounds: usize,
    pub weighting: Weighting,
    pub concurrent: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub params: ParamVector,
    pub ledger: CommsLedger,
}

/// Runs `rounds` of broadcast → local training → aggregation.
pub fn run_federated_training<T: LocalTrainer>(
    trainer: &T,
    init: ParamVector,
    schedule: FedSchedule,
) -> Result<FedOutcome> {
    let k = trainer.num_clients();
    let active: Vec<usize> = (0..k).filter(|&c| trainer.samples(c) > 0).collect();
    for c in (0..k).filter(|c| !active.contains(c)) {
        log::warn!("federation: client {c} has no training nodes; skipped with weight 0");
    }
    if active.is_empty() && schedule.rounds > 0 {
        return Err(Error::Federation("no client has training nodes".into()));
    }
    let weights: Vec<f64> = active
        .iter()
        .map(|&c| match schedule.weighting {
            Weighting::Samples => trainer.samples(c) as f64,
            Weighting::Uniform => 1.0,
        })
        .collect();

    let mut global = init;
    let mut ledger = CommsLedger::default();
    let mut states: Vec<T::State> = active
        .iter()
        .map(|&c| trainer.init_state(c, &global))
        .collect();

    for round in 0..schedule.rounds {
        let work = |(&c, state): (&usize, &mut T::State)| -> Result<ParamVector> {
            let mut local = global.clone();
            let mut r = rng::stream(
                schedule.seed,
                &[rng::tag::LOCAL_TRAIN, round as u64, c as u64],
            );
            trainer.train_round(c, &mut local, state, &mut r)?;
            Ok(local)
        };
        let locals: Vec<ParamVector> = if schedule.concurrent {
            active
                .par_iter()
                .zip(states.par_iter_mut())
                .map(work)
                .collect::<Result<_>>()?
        } else {
            active
                .iter()
                .zip(states.iter_mut())
                .map(work)
                .collect::<Result<_>>()?
        };
        global = fedavg_aggregate(&locals, &weights)?;
        ledger.record_model_round(active.len(), global.len());
    }
    Ok(FedOutcome {
        params: global,
        ledger,
    })
}

/// DP-SGD settings for generator training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DpConfig {
    pub enabled: bool,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
}

impl DpConfig {
    pub fn disabled() -> Self {
        DpConfig {
            enabled: false,
            clip_norm: 1.0,
            noise_multiplier: 0.0,
            delta: 1e-5,
        }
    }

    pub fn new(clip_norm: f64, noise_multiplier: f64, delta: f64) -> Result<Self> {
        let dp = DpConfig {
            enabled: true,
            clip_norm,
            noise_multiplier,
            delta,
        };
        dp.validate()?;
        Ok(dp)
    }

    /// Noise multiplier for which a single step is an `(ε, δ)` Gaussian
    /// mechanism: `σ = √(2 ln(1.25/δ)) / ε`.
    pub fn from_step_epsilon(epsilon: f64, delta: f64, clip_norm: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("dp epsilon must be positive, got {epsilon}")));
        }
        Self::new(clip_norm, gaussian_factor(delta) / epsilon, delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!(
                "dp clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "dp noise multiplier must be non-negative, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("dp delta must be in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Per-step ε of the Gaussian mechanism; infinite without noise.
    pub fn step_epsilon(&self) -> f64 {
        if self.noise_multiplier == 0.0 {
            f64::INFINITY
        } else {
            gaussian_factor(self.delta) / self.noise_multiplier
        }
    }

    /// Loose bound: basic composition sums the per-step ε over all steps
    /// (and δ likewise).
    pub fn reported_epsilon(&self, steps: usize) -> f64 {
        if steps == 0 {
            0.0
        } else {
            self.step_epsilon() * steps as f64
        }
    }
}

fn gaussian_factor(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `g` down to norm at most `c`; returns the norm before clipping.
pub fn clip_to_norm(g: &mut [f64], c: f64) -> f64 {
    let norm = l2_norm(g);
    if norm <= c {
        return norm;
    }
    let mut scale = c / norm;
    loop {
        let clipped: Vec<f64> = g.iter().map(|v| v * scale).collect();
        if l2_norm(&clipped) <= c {
            g.copy_from_slice(&clipped);
            return norm;
        }
        scale *= 1.0 - f64::EPSILON;
    }
}

/// Clips every per-sample gradient to norm `C`, adds `N(0, σ²C²)` noise to
/// the sum and divides by the batch size.
pub fn dp_sgd_step(per_sample: &[Vec<f64>], dp: &DpConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    dp.validate()?;
    if !dp.enabled {
        return Err(Error::Config("dp_sgd_step called with DP disabled".into()));
    }
    let Some(first) = per_sample.first() else {
        return Err(Error::Federation("empty DP batch".into()));
    };
    let len = first.len();
    let mut sum = vec![0.0; len];
    for g in per_sample {
        if g.len() != len {
            return Err(Error::Federation(format!(
                "per-sample gradient length {} != {len}",
                g.len()
            )));
        }
        let mut g = g.clone();
        clip_to_norm(&mut g, dp.clip_norm);
        assert!(l2_norm(&g) <= dp.clip_norm, "clipped gradient exceeds C");
        for (s, v) in sum.iter_mut().zip(&g) {
            *s += v;
        }
    }
    if dp.noise_multiplier > 0.0 {
        let normal = Normal::new(0.0, dp.noise_multiplier * dp.clip_norm)
            .map_err(|e| Error::Config(e.to_string()))?;
        for s in sum.iter_mut() {
            *s += normal.sample(rng);
        }
    }
    let b = per_sample.len() as f64;
    for s in sum.iter_mut() {
        *s /= b;
    }
    Ok(sum)
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
    fn weighted_mean_of_two_clients() {
        let out = fedavg_aggregate(&[scalar(0.0), scalar(4.0)], &[1.0, 3.0]).unwrap();
        assert_eq!(out.as_slice(), &[3.0]);
    }

    #[test]
    fn identical_clients_are_a_fixed_point() {
        let out = fedavg_aggregate(&[scalar(0.7), scalar(0.7), scalar(0.7)], &[5.0, 1.0, 2.0]).unwrap();
        assert!((out.as_slice()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn registry_mismatch_is_rejected() {
        let mut other = ParamVector::new();
        other.push("v", &[1], &[0.0]).unwrap();
        let err = fedavg_aggregate(&[scalar(0.0), other], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Federation(_)));
    }

    #[test]
    fn ledger_prototype_example() {
        let mut l = CommsLedger::default();
        l.record_prototypes(&[2, 2, 2], 4);
        assert_eq!(l.proto_up, 24);
        assert_eq!(l.proto_total(), 48);
    }

    #[test]
    fn clipping_hits_the_bound() {
        let mut g = vec![2.0, 0.0];
        assert_eq!(clip_to_norm(&mut g, 1.0), 2.0);
        assert!((l2_norm(&g) - 1.0).abs() < 1e-15);
        let mut small = vec![0.3, 0.4];
        clip_to_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn noiseless_dp_is_the_plain_mean() {
        let dp = DpConfig::new(10.0, 0.0, 1e-5).unwrap();
        let grads = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        let out = dp_sgd_step(&grads, &dp, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(out, vec![2.0, 0.5]);
    }

    #[test]
    fn non_positive_clip_is_a_config_error() {
        assert!(matches!(DpConfig::new(0.0, 1.0, 1e-5), Err(Error::Config(_))));
        let bad = DpConfig {
            clip_norm: -1.0,
            ..DpConfig::new(1.0, 1.0, 1e-5).unwrap()
        };
        let err = dp_sgd_step(&[vec![1.0]], &bad, &mut rng::stream(0, &[])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn epsilon_roundtrip() {
        let dp = DpConfig::from_step_epsilon(2.0, 1e-5, 1.0).unwrap();
        assert!((dp.step_epsilon() - 2.0).abs() < 1e-12);
        assert!((dp.reported_epsilon(10) - 20.0).abs() < 1e-10);
    }
}
