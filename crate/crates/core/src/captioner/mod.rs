//! End-to-end captioner: model assembly, training, greedy decoding and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod model;
pub mod prepare;
pub mod train;

pub use config::ModelConfig;
pub use decode::{CaptionHypothesis, EmittedToken, TokenSource};
pub use model::{CaptionModel, EntityVars};
pub use prepare::{align_targets, Dataset, PreparedScene};
pub use train::{Adam, Example, StepReport, Trainer};
