//! Habitat classification toolkit: two-level taxonomy modelling with spatial
//! block cross-validation, imbalance-aware losses, three learner families,
//! strategy comparison, ensembling, and feature attribution.

pub mod attribution;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod learners;
pub mod losses;
pub mod metrics;
pub mod schemes;
pub mod spatial;
pub mod stats;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
