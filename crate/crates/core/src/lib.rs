//! Active learning for concept bottleneck reward models.
//!
//! A reward is factored as `r(x, y) = g(x)ᵀ c(x, y)`: a gating head maps the
//! prompt embedding to per-concept importance weights, and a probabilistic
//! encoder maps the prompt+response embedding to a diagonal Gaussian over
//! concept scores. Relative concept labels (which of two responses is better
//! on concept `k`) are bought one `(pair, concept)` query at a time, chosen by
//! an acquisition function, and the model is retrained from a FIFO replay
//! buffer after every episode.
//!
//! Module map:
//!
//! - [`datamodel`]: shared records, the query pool and the experiment config.
//! - [`data`]: synthetic worlds and label oracles, the binary embedding
//!   format and the judge annotation format.
//! - [`model`]: forward math (concept encoder, gating, reward, preference).
//! - [`training`]: joint loss, analytic gradients, Adam, one-epoch training.
//! - [`acquisition`]: random, variance, CwIS and EIG scores plus top-B selection.
//! - [`engine`]: the episodic acquisition/retrain loop and run directories.
//! - [`reporting`]: accuracy metrics, multi-seed aggregation, SVG plots and
//!   the linear-probe leakage diagnostic.
//! - [`commands`]: the subcommands behind the `cbrm` binary.

pub mod acquisition;
pub mod commands;
pub mod data;
pub mod datamodel;
pub mod engine;
pub mod error;
pub mod model;
pub mod reporting;
pub mod rng;
pub mod training;

pub use datamodel::{
    AcquisitionKind, ConceptLabel, Embedding, ExperimentConfig, GatingMode, PreferencePair,
    QueryPool,
};
pub use error::{Error, Result};
pub use model::ModelParams;
