use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conformal::{QuantileMethod, ScoreKind, Scorer};
use crate::error::{Error, Result};
use crate::federation::DpConfig;
use crate::generator::{VaeTraining, VgaeTraining};
use crate::graph::{self, Graph};
use crate::models::Architecture;
use crate::synth;

/// Dataset value naming the built-in Cora-sized synthetic citation graph.
pub const BUILTIN_CORA_LIKE: &str = "builtin:cora-like";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Loc,
    Fed,
    Gen,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Loc => "loc",
            Pipeline::Fed => "fed",
            Pipeline::Gen => "gen",
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loc" => Ok(Pipeline::Loc),
            "fed" => Ok(Pipeline::Fed),
            "gen" => Ok(Pipeline::Gen),
            _ => Err(Error::Config(format!("unknown pipeline `{s}` (loc, fed, gen)"))),
        }
    }
}

/// One experiment: flat key/value TOML, every key optional.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding `features.tsv`, `edges.txt`, `labels.tsv`, or
    /// [`BUILTIN_CORA_LIKE`].
    pub dataset: String,
    /// Label for the `dataset` CSV column; defaults to the directory name.
    pub name: Option<String>,
    pub clients: Vec<usize>,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    pub scores: Vec<ScoreKind>,
    pub quantiles: Vec<QuantileMethod>,
    pub pipelines: Vec<Pipeline>,
    pub model: Architecture,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub imbalance: f64,
    pub randomized: bool,
    pub raps_nu: f64,
    pub raps_k_reg: usize,
    pub temperature_scaling: bool,
    pub protos_per_client: usize,
    pub edge_top_p: f64,
    pub vgae_rounds: usize,
    pub vgae_local_epochs: usize,
    pub vgae_lr: f64,
    pub vae_epochs: usize,
    pub vae_batch_size: usize,
    pub vae_lr: f64,
    pub vae_latent: usize,
    pub vae_rho: f64,
    pub vae_beta: f64,
    /// Per-step ε of the Gaussian mechanism; turns DP on for the VAE.
    pub dp_epsilon: Option<f64>,
    /// Alternative to `dp_epsilon`: the noise multiplier σ directly.
    pub dp_noise_multiplier: Option<f64>,
    pub dp_delta: f64,
    pub dp_clip: f64,
    /// Run client work on the rayon pool; results do not depend on it.
    pub concurrent: bool,
    /// Write 0 instead of the measured wall time, making files reproducible
    /// byte for byte.
    pub omit_wall_time: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let vae = VaeTraining::default();
        let vgae = VgaeTraining::default();
        ExperimentConfig {
            dataset: BUILTIN_CORA_LIKE.into(),
            name: None,
            clients: vec![3, 5, 10, 20],
            seeds: (0..5).collect(),
            alphas: vec![0.05],
            scores: vec![ScoreKind::Aps],
            quantiles: vec![QuantileMethod::Averaging],
            pipelines: vec![Pipeline::Loc, Pipeline::Fed],
            model: Architecture::Gcn,
            hidden: 64,
            lr: 0.01,
            weight_decay: 5e-4,
            rounds: 100,
            local_epochs: 1,
            imbalance: crate::partition::DEFAULT_IMBALANCE,
            randomized: false,
            raps_nu: 0.01,
            raps_k_reg: 1,
            temperature_scaling: true,
            protos_per_client: 10,
            edge_top_p: 0.04,
            vgae_rounds: vgae.rounds,
            vgae_local_epochs: vgae.local_epochs,
            vgae_lr: vgae.lr,
            vae_epochs: vae.epochs,
            vae_batch_size: vae.batch_size,
            vae_lr: vae.lr,
            vae_latent: vae.latent,
            vae_rho: vae.rho,
            vae_beta: vae.beta,
            dp_epsilon: None,
            dp_noise_multiplier: None,
            dp_delta: 1e-5,
            dp_clip: 1.0,
            concurrent: true,
            omit_wall_time: false,
            out: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (key, empty) in [
            ("clients", self.clients.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("alphas", self.alphas.is_empty()),
            ("scores", self.scores.is_empty()),
            ("quantiles", self.quantiles.is_empty()),
            ("pipelines", self.pipelines.is_empty()),
        ] {
            if empty {
                return fail(format!("`{key}` must not be empty"));
            }
        }
        if self.clients.contains(&0) {
            return fail("client counts must be positive".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return fail(format!("alpha {a} outside (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.imbalance) {
            return fail(format!("imbalance {} outside [0, 1)", self.imbalance));
        }
        if self.hidden == 0 || self.local_epochs == 0 || self.vgae_local_epochs == 0 {
            return fail("hidden width and local epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.vae_lr > 0.0 && self.vgae_lr > 0.0) || self.weight_decay < 0.0 {
            return fail("learning rates must be positive and weight decay non-negative".into());
        }
        if self.raps_nu < 0.0 || self.raps_k_reg == 0 {
            return fail("raps_nu must be ≥ 0 and raps_k_reg ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.edge_top_p) {
            return fail(format!("edge_top_p {} outside [0, 1]", self.edge_top_p));
        }
        if self.protos_per_client == 0 || self.vae_batch_size == 0 || self.vae_latent == 0 {
            return fail("protos_per_client, vae_batch_size and vae_latent must be positive".into());
        }
        if !(self.vae_rho > 0.0 && self.vae_rho < 1.0) || self.vae_beta < 0.0 {
            return fail("vae_rho must be in (0, 1) and vae_beta ≥ 0".into());
        }
        if self.dp_epsilon.is_some() && self.dp_noise_multiplier.is_some() {
            return fail("set at most one of dp_epsilon and dp_noise_multiplier".into());
        }
        self.dp()?;
        Ok(())
    }

    pub fn dp(&self) -> Result<DpConfig> {
        match (self.dp_epsilon, self.dp_noise_multiplier) {
            (Some(eps), _) => DpConfig::from_step_epsilon(eps, self.dp_delta, self.dp_clip),
            (None, Some(sigma)) => DpConfig::new(self.dp_clip, sigma, self.dp_delta),
            (None, None) => Ok(DpConfig::disabled()),
        }
    }

    pub fn scorer(&self, kind: ScoreKind) -> Scorer {
        Scorer {
            kind,
            randomized: self.randomized,
            nu: self.raps_nu,
            k_reg: self.raps_k_reg,
        }
    }

    pub fn vae_training(&self) -> Result<VaeTraining> {
        Ok(VaeTraining {
            epochs: self.vae_epochs,
            batch_size: self.vae_batch_size,
            lr: self.vae_lr,
            latent: self.vae_latent,
            rho: self.vae_rho,
            beta: self.vae_beta,
            recon: None,
            per_sample: false,
            dp: self.dp()?,
        })
    }

    pub fn vgae_training(&self) -> VgaeTraining {
        VgaeTraining {
            rounds: self.vgae_rounds,
            local_epochs: self.vgae_local_epochs,
            lr: self.vgae_lr,
        }
    }

    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        if self.dataset == BUILTIN_CORA_LIKE {
            return "cora-like".into();
        }
        Path::new(&self.dataset)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.dataset.clone())
    }

    pub fn load_dataset(&self) -> Result<Graph> {
        if self.dataset == BUILTIN_CORA_LIKE {
            synth::cora_like(0)
        } else {
            graph::load_graph(Path::new(&self.dataset))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_toml() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            dataset = "data/cora"
            clients = [3]
            alphas = [0.05, 0.1]
            scores = ["aps", "raps"]
            quantiles = ["avg", "tdigest", "exact"]
            pipelines = ["fed", "gen"]
            model = "sage"
            dp_epsilon = 5.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.clients, vec![3]);
        assert_eq!(cfg.quantiles.len(), 3);
        assert_eq!(cfg.model, Architecture::Sage);
        assert!(cfg.dp().unwrap().enabled);
        assert_eq!(cfg.dataset_name(), "cora");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("alphas = [1.5]").is_err());
        assert!(ExperimentConfig::from_toml("clients = []").is_err());
        assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("dp_clip = 0.0\ndp_epsilon = 1.0").is_err());
    }
}
