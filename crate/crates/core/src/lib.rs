//! Depth- and concept-aware transformer captioning for scene-text images.
//!
//! The pipeline runs on file fixtures in place of detectors, OCR and depth
//! estimation: per-entity depth values are read from 8-bit depth maps,
//! appearance features are refreshed by depth-biased self-attention, OCR
//! subword vectors are aligned with visual concept embeddings, and a
//! multimodal transformer decodes captions with a vocabulary head plus a
//! pointer head that copies OCR tokens.

pub mod captioner;
pub mod defum;
pub mod depthgeom;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradsuite;
pub mod ingest;
pub mod numerics;
pub mod sgam;

pub use error::{Error, Result};
