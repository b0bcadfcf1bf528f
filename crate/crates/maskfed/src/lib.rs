//! Federated training of sparse binary masks over frozen random networks.
//!
//! A parameter server and a set of simulated clients cooperate to find a
//! sparse subnetwork of a fixed, randomly initialized network. The weights
//! are never trained: clients optimize per-weight scores whose sigmoid gives
//! the probability that a weight belongs to the subnetwork, sample binary
//! masks from those probabilities, and upload only the sampled bits. The
//! server averages the received masks into the next global probability mask.
//!
//! An entropy-proxy regularizer added to the local loss drives the mask
//! probabilities toward zero, so the uplink payloads compress below one bit
//! per parameter. Top-k deterministic masking and majority-vote SignSGD are
//! included as baselines, all selectable by name at runtime.

// `!(x > 0.0)` is used for validation on purpose: unlike `x <= 0.0` it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mask;
pub mod method;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
