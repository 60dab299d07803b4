//! Data ingestion and the synthetic benchmark world.

pub mod annotations;
pub mod cbre;
pub mod synthetic;

pub use annotations::{load_annotations, write_annotations, AnnotationRecord, AnnotationSet};
pub use cbre::{load_embeddings, write_embeddings};
pub use synthetic::{generate_synthetic, SyntheticWorld};

use crate::datamodel::PreferencePair;
use crate::error::Result;

/// Anything that can answer relative concept queries and preference queries.
///
/// `Ok(None)` means the source has no usable label for that query (for
/// instance a judge tie); the query is still spent.
pub trait LabelSource: Sync {
    fn n_concepts(&self) -> usize;

    fn concept_label(&self, pair: &PreferencePair, k: usize) -> Result<Option<u8>>;

    fn preference(&self, pair: &PreferencePair) -> Result<Option<u8>>;
}
