//! Martingale-property diagnostics for sequential predictive models.
//!
//! A model conditioned on an observed dataset imputes future samples path by
//! path. For an exchangeable (Bayesian) model the predictive mean is a
//! martingale along each path; the statistics in [`diagnostics`] measure
//! departures from that and compare them against bootstrap intervals drawn
//! from an exact conjugate reference.

pub mod data_gen;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod llm_client;
pub mod models;
pub mod numeric;
pub mod prompts;
pub mod rng;
pub mod sampler;
pub mod types;

pub use error::{Error, PathGenerationError, Result};
pub use models::{SequentialPredictiveModel, SyntheticModel};
pub use rng::RngStream;
pub use types::{ObservedDataset, PathEnsemble, Sample, SamplePath, TaskKind, TaskSpec};
