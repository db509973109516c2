//! Character-level PHOC vectors and common-space entity embeddings.

pub mod embed;
pub mod phoc;

pub use embed::{EmbedParams, EntityEmbedding, EntityKind};
pub use phoc::{phoc, PhocVector, PHOC_BIGRAMS, PHOC_DIM};
