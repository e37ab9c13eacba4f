//! Experiment harness: configuration, the Loc / Fed / Gen pipelines, and CSV
//! output.
//!
//! * **loc** — every client trains alone and calibrates on its own scores;
//!   metrics are averaged over clients.
//! * **fed** — FedAvg classifier, calibration pooled through the federated
//!   quantile rule, metrics over all test nodes.
//! * **gen** — prototype-based neighbour generation first, then **fed** on the
//!   augmented subgraphs.

mod config;
mod output;
mod pipeline;

pub use config::{ExperimentConfig, Pipeline, BUILTIN_CORA_LIKE};
pub use output::{accuracy_report, emit_outputs, AccuracyChange, OUTPUT_FILES, SUMMARY_FILE};
pub use pipeline::{augment_clients, run_experiment, run_pipeline, Augmentation, ClientView, Scenario};

use serde::Serialize;

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub dataset: String,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub pipeline: Pipeline,
    pub model: String,
    pub score: String,
    pub alpha: f64,
    pub qmethod: String,
    pub coverage: f64,
    pub inefficiency: f64,
    pub accuracy: f64,
    pub qhat: f64,
    pub delta_e_pct: f64,
    pub scalars_comm: u64,
    pub wall_ms: u64,
}
