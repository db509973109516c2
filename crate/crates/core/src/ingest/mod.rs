//! File formats and loaders: scene records (JSON Lines), depth maps (P5
//! PGM), subword embedding tables, vocabularies, and the fixture generator.

pub mod embedding;
pub mod fixtures;
pub mod pgm;
pub mod scene;
pub mod vocab;

pub use embedding::{load_embedding_table, parse_embedding_table, EmbeddingTable, SUBWORD_DIM};
pub use fixtures::{gen_fixtures, generate_fixtures, FixtureConfig, FixtureSet};
pub use pgm::{load_depth_map, parse_pgm, DepthMap};
pub use scene::{
    load_scene_records, parse_scene_records, save_scene_records, scene_records_to_string, BoundingBox,
    ConceptCandidate, ObjectEntry, OcrEntry, SceneRecord, DEFAULT_OCR_CONFIDENCE,
};
pub use vocab::{load_vocabulary, parse_vocabulary, Vocabulary};
