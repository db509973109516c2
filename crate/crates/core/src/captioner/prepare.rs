//! Turns scene records into model-ready matrices and caption targets.

use std::path::{Path, PathBuf};

use crate::depthgeom::{depth_value_of_region, relative_depth_matrix, spatial_feature, DepthValue};
use crate::error::{Error, Result};
use crate::eval::tokenize::{normalize_token, tokenize};
use crate::features::phoc::{phoc, PHOC_DIM};
use crate::ingest::vocab::{EOS, UNK};
use crate::ingest::{
    load_depth_map, load_embedding_table, load_scene_records, DepthMap, EmbeddingTable, SceneRecord, Vocabulary,
    SUBWORD_DIM,
};
use crate::numerics::Matrix;
use crate::sgam::{select_concepts, ConceptSet};

use super::ModelConfig;

/// Per-record inputs with the fixture-level perception already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene {
    pub id: String,
    /// `N x d`.
    pub object_features: Matrix,
    /// `N x 5`.
    pub object_spatial: Matrix,
    /// `M x d`.
    pub ocr_features: Matrix,
    /// `M x 300`.
    pub ocr_subword: Matrix,
    /// `M x 604`.
    pub ocr_phoc: Matrix,
    /// `M x 5`.
    pub ocr_spatial: Matrix,
    /// `M x 1`.
    pub ocr_conf: Matrix,
    /// Normalized OCR strings, the surfaces the copy head emits.
    pub ocr_surfaces: Vec<String>,
    /// Objects first, then OCR tokens.
    pub depth_values: Vec<DepthValue>,
    pub concepts: ConceptSet,
    pub captions: Vec<String>,
}

fn stack(rows: Vec<Vec<f64>>, cols: usize) -> Matrix {
    let n = rows.len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Matrix::from_parts(n, cols, data)
}

impl PreparedScene {
    pub fn new(
        record: &SceneRecord,
        depth: &DepthMap,
        table: &EmbeddingTable,
        k: usize,
        allow_oov: bool,
    ) -> Result<Self> {
        record.validate()?;
        if (depth.width(), depth.height()) != (record.width, record.height) {
            return Err(Error::Validation {
                record: record.id.clone(),
                field: "depth_map".into(),
                msg: format!(
                    "map is {}x{} but the image is {}x{}",
                    depth.width(),
                    depth.height(),
                    record.width,
                    record.height
                ),
            });
        }
        let d = record.feature_dim();
        let (w, h) = (record.width, record.height);
        let mut depth_values = Vec::with_capacity(record.objects.len() + record.ocr.len());
        let mut object_spatial = Vec::new();
        for o in &record.objects {
            let dv = depth_value_of_region(depth, &o.bbox)?;
            depth_values.push(dv);
            object_spatial.push(spatial_feature(&o.bbox, dv, w, h).to_vec());
        }
        let mut ocr_spatial = Vec::new();
        let mut subword = Vec::new();
        let mut phocs = Vec::new();
        for o in &record.ocr {
            let dv = depth_value_of_region(depth, &o.bbox)?;
            depth_values.push(dv);
            ocr_spatial.push(spatial_feature(&o.bbox, dv, w, h).to_vec());
            subword.push(table.subword_vector(&normalize_token(&o.token), allow_oov)?);
            phocs.push(phoc(&o.token)?.to_f64());
        }
        Ok(Self {
            id: record.id.clone(),
            object_features: stack(record.objects.iter().map(|o| o.feat.clone()).collect(), d),
            object_spatial: stack(object_spatial, 5),
            ocr_features: stack(record.ocr.iter().map(|o| o.feat.clone()).collect(), d),
            ocr_subword: stack(subword, SUBWORD_DIM),
            ocr_phoc: stack(phocs, PHOC_DIM),
            ocr_spatial: stack(ocr_spatial, 5),
            ocr_conf: stack(record.ocr.iter().map(|o| vec![o.conf]).collect(), 1),
            ocr_surfaces: record.ocr_surfaces(),
            depth_values,
            concepts: select_concepts(&record.concepts, k, table, allow_oov)?,
            captions: record.captions.clone(),
        })
    }

    pub fn num_objects(&self) -> usize {
        self.object_features.rows()
    }

    pub fn num_ocr(&self) -> usize {
        self.ocr_features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.object_features.cols()
    }

    pub fn relative_depth(&self) -> Matrix {
        relative_depth_matrix(&self.depth_values)
    }
}

/// Maps a caption to output indices: `< |V|` selects a vocabulary word,
/// `|V| + m` copies OCR token `m`. `</s>` is appended and the sequence is
/// cut to `max_len` steps.
///
/// A word found in the vocabulary is supervised on the vocabulary head
/// unless `prefer_copy`; otherwise the first OCR token with the same surface
/// is used, and anything else becomes `<unk>`.
pub fn align_targets(
    caption: &str,
    vocab: &Vocabulary,
    ocr_surfaces: &[String],
    max_len: usize,
    prefer_copy: bool,
) -> Vec<usize> {
    let v = vocab.len();
    let mut out: Vec<usize> = tokenize(caption)
        .iter()
        .map(|tok| {
            let word = vocab.index_of(tok);
            let copy = ocr_surfaces.iter().position(|s| s == tok).map(|m| v + m);
            let pick = if prefer_copy { copy.or(word) } else { word.or(copy) };
            pick.unwrap_or(UNK)
        })
        .collect();
    out.push(EOS);
    out.truncate(max_len);
    out
}

/// A records file with its depth maps and embedding table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub records: Vec<SceneRecord>,
    pub depth_maps: Vec<DepthMap>,
    pub embeddings: EmbeddingTable,
}

impl Dataset {
    /// Reads `records.jsonl`, `embeddings.txt` and the referenced depth maps
    /// from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let records = load_scene_records(dir.join("records.jsonl"))?;
        let depth_maps = records
            .iter()
            .map(|r| load_depth_map(dir.join(&r.depth_map)))
            .collect::<Result<Vec<_>>>()?;
        let embeddings = load_embedding_table(dir.join("embeddings.txt"))?;
        Ok(Self {
            dir,
            records,
            depth_maps,
            embeddings,
        })
    }

    /// Prepares every record; all records must share one feature width.
    pub fn prepare(&self, config: &ModelConfig) -> Result<Vec<PreparedScene>> {
        prepare_all(&self.records, &self.depth_maps, &self.embeddings, config)
    }
}

pub fn prepare_all(
    records: &[SceneRecord],
    depth_maps: &[DepthMap],
    table: &EmbeddingTable,
    config: &ModelConfig,
) -> Result<Vec<PreparedScene>> {
    if records.len() != depth_maps.len() {
        return Err(Error::Argument(format!(
            "{} records but {} depth maps",
            records.len(),
            depth_maps.len()
        )));
    }
    let scenes = records
        .iter()
        .zip(depth_maps)
        .map(|(r, m)| PreparedScene::new(r, m, table, config.k, config.allow_oov))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = scenes.first() {
        if let Some(s) = scenes.iter().find(|s| s.feature_dim() != first.feature_dim()) {
            return Err(Error::Validation {
                record: s.id.clone(),
                field: "feat".into(),
                msg: format!("width {} differs from {}", s.feature_dim(), first.feature_dim()),
            });
        }
    }
    Ok(scenes)
}
