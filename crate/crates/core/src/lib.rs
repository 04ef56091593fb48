//! Federated-learning data market simulator.
//!
//! Data Consumers (DCs) bid for Data Owners (DOs); a platform matches each
//! owner to at most one consumer per round. Consumers whose tasks overlap can
//! form alliances: a synthetic consumer trains a shared submodel on the
//! contested owners and its knowledge is merged back into each participant's
//! model through entropy-weighted ensemble distillation.
//!
//! Module map:
//! - [`market`]: entities, bid history and matching mechanisms.
//! - [`dataset`]: synthetic blobs, IDX loading and the market partition.
//! - [`nn`]: dense MLP engine, probability kernels and Adam.
//! - [`fed`]: local training, FedAvg, FedDF and evaluation.
//! - [`distill`]: entropy-weighted ensemble distillation.
//! - [`alliance`]: alliance detection, selection and instantiation.
//! - [`maxclique`]: exact maximum-weight clique solver and oracle.
//! - [`sim`]: scenario configuration, the round loop and metric output.

pub mod alliance;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod fed;
pub mod market;
pub mod maxclique;
pub mod nn;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

/// Class identifier in the global label universe `0..K`.
pub type ClassId = usize;

/// Ordered set of class ids.
pub type LabelSet = std::collections::BTreeSet<ClassId>;
