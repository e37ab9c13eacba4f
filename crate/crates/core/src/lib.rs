//! Federated conformal prediction for node classification on partitioned
//! graphs.
//!
//! The crate is organised bottom-up: [`graph`] and [`partition`] produce client
//! subgraphs, [`kernel`] and [`models`] train GCN/GraphSAGE classifiers and the
//! VAE/VGAE generators, [`federation`] runs FedAvg with a communication ledger
//! and optional DP-SGD, [`generator`] recovers missing cross-client neighbours
//! with shared prototypes, and [`conformal`] turns calibrated scores into
//! prediction sets with the partial-exchangeability quantile rule.
//! [`harness`] wires everything into the Loc / Fed / Gen experiment pipelines.

pub mod conformal;
pub mod error;
pub mod federation;
pub mod generator;
pub mod graph;
pub mod harness;
pub mod kernel;
pub mod models;
pub mod partition;
pub mod rng;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Graph, Role, RoleMask};
pub use kernel::{Matrix, ParamVector};
pub use partition::Partition;
