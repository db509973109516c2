//! Common-space embeddings of objects, OCR tokens and visual concepts.
//!
//! Each embedding is a sum of layer-normalized projections:
//!
//! * object:  `LN(x_of W_of) + LN(s W_s)`
//! * OCR:     `LN(x_tf' W_tf + x_ft' W_ft + x_ph W_ph) + LN(s W_s) + LN(conf W_conf)`
//! * concept: `LN(ft W_voc) + LN(score W_score)`
//!
//! `W_s` is one parameter shared by the object and OCR paths. Inputs are
//! row-batched: one entity per row.

use super::phoc::PHOC_DIM;
use crate::depthgeom::SpatialFeature5;
use crate::error::{Error, Result};
use crate::ingest::SUBWORD_DIM;
use crate::numerics::layers::LayerNormParams;
use crate::numerics::{Matrix, ParamId, ParamStore, SplitMix64, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Object,
    Ocr,
    Concept,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityEmbedding {
    pub kind: EntityKind,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbedParams {
    pub appearance_dim: usize,
    pub t: usize,
    pub w_of: ParamId,
    pub obj_feat_norm: LayerNormParams,
    pub w_s: ParamId,
    pub obj_loc_norm: LayerNormParams,
    pub w_tf: ParamId,
    pub w_ft: ParamId,
    pub w_ph: ParamId,
    pub ocr_feat_norm: LayerNormParams,
    pub ocr_loc_norm: LayerNormParams,
    pub w_conf: ParamId,
    pub conf_norm: LayerNormParams,
    pub w_voc: ParamId,
    pub voc_norm: LayerNormParams,
    pub w_score: ParamId,
    pub score_norm: LayerNormParams,
}

impl EmbedParams {
    pub fn register(store: &mut ParamStore, rng: &mut SplitMix64, d: usize, t: usize) -> Result<Self> {
        let mut w = |store: &mut ParamStore, name: &str, fan_in: usize| store.add(name, rng.xavier(fan_in, t));
        Ok(Self {
            appearance_dim: d,
            t,
            w_of: w(store, "embed.w_of", d)?,
            obj_feat_norm: LayerNormParams::register(store, "embed.obj_feat_norm", t)?,
            w_s: w(store, "embed.w_s", 5)?,
            obj_loc_norm: LayerNormParams::register(store, "embed.obj_loc_norm", t)?,
            w_tf: w(store, "embed.w_tf", d)?,
            w_ft: w(store, "embed.w_ft", SUBWORD_DIM)?,
            w_ph: w(store, "embed.w_ph", PHOC_DIM)?,
            ocr_feat_norm: LayerNormParams::register(store, "embed.ocr_feat_norm", t)?,
            ocr_loc_norm: LayerNormParams::register(store, "embed.ocr_loc_norm", t)?,
            w_conf: w(store, "embed.w_conf", 1)?,
            conf_norm: LayerNormParams::register(store, "embed.conf_norm", t)?,
            w_voc: w(store, "embed.w_voc", SUBWORD_DIM)?,
            voc_norm: LayerNormParams::register(store, "embed.voc_norm", t)?,
            w_score: w(store, "embed.w_score", 1)?,
            score_norm: LayerNormParams::register(store, "embed.score_norm", t)?,
        })
    }

    fn project(&self, tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId) -> Result<Var> {
        let w = tape.param(store, w);
        tape.matmul(x, w)
    }

    fn check_rows(&self, tape: &Tape, what: &'static str, vars: &[(Var, usize)]) -> Result<usize> {
        let rows = tape.shape(vars[0].0).0;
        for &(v, cols) in vars {
            if tape.shape(v) != (rows, cols) {
                return Err(Error::shape(what, tape.shape(v), (rows, cols)));
            }
        }
        Ok(rows)
    }

    /// `x_of`: N x d appearance, `spatial`: N x 5.
    pub fn embed_object(&self, tape: &mut Tape, store: &ParamStore, x_of: Var, spatial: Var) -> Result<Var> {
        self.check_rows(tape, "embed_object", &[(x_of, self.appearance_dim), (spatial, 5)])?;
        let a = self.project(tape, store, x_of, self.w_of)?;
        let a = self.obj_feat_norm.apply(tape, store, a)?;
        let b = self.project(tape, store, spatial, self.w_s)?;
        let b = self.obj_loc_norm.apply(tape, store, b)?;
        tape.add(a, b)
    }

    /// `x_tf`: M x d updated appearance, `x_ft`: M x 300 aligned subword,
    /// `x_ph`: M x 604, `spatial`: M x 5, `conf`: M x 1.
    #[allow(clippy::too_many_arguments)]
    pub fn embed_ocr(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_tf: Var,
        x_ft: Var,
        x_ph: Var,
        spatial: Var,
        conf: Var,
    ) -> Result<Var> {
        self.check_rows(
            tape,
            "embed_ocr",
            &[
                (x_tf, self.appearance_dim),
                (x_ft, SUBWORD_DIM),
                (x_ph, PHOC_DIM),
                (spatial, 5),
                (conf, 1),
            ],
        )?;
        let a = self.project(tape, store, x_tf, self.w_tf)?;
        let b = self.project(tape, store, x_ft, self.w_ft)?;
        let c = self.project(tape, store, x_ph, self.w_ph)?;
        let feat = tape.add(a, b)?;
        let feat = tape.add(feat, c)?;
        let feat = self.ocr_feat_norm.apply(tape, store, feat)?;
        let loc = self.project(tape, store, spatial, self.w_s)?;
        let loc = self.ocr_loc_norm.apply(tape, store, loc)?;
        let cf = self.project(tape, store, conf, self.w_conf)?;
        let cf = self.conf_norm.apply(tape, store, cf)?;
        let out = tape.add(feat, loc)?;
        tape.add(out, cf)
    }

    /// `ft`: K x 300 concept vectors, `score`: K x 1.
    pub fn embed_concept(&self, tape: &mut Tape, store: &ParamStore, ft: Var, score: Var) -> Result<Var> {
        self.check_rows(tape, "embed_concept", &[(ft, SUBWORD_DIM), (score, 1)])?;
        let a = self.project(tape, store, ft, self.w_voc)?;
        let a = self.voc_norm.apply(tape, store, a)?;
        let b = self.project(tape, store, score, self.w_score)?;
        let b = self.score_norm.apply(tape, store, b)?;
        tape.add(a, b)
    }

    /// Single-entity object embedding.
    pub fn object_embedding(&self, store: &ParamStore, x_of: &[f64], s: &SpatialFeature5) -> Result<EntityEmbedding> {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(x_of.to_vec())?);
        let s = tape.constant(Matrix::row_vector(s.to_vec())?);
        let out = self.embed_object(&mut tape, store, x, s)?;
        Ok(EntityEmbedding {
            kind: EntityKind::Object,
            vec: tape.value(out).data().to_vec(),
        })
    }

    /// Single-entity OCR embedding.
    #[allow(clippy::too_many_arguments)]
    pub fn ocr_embedding(
        &self,
        store: &ParamStore,
        x_tf: &[f64],
        x_ft: &[f64],
        x_ph: &[f64],
        s: &SpatialFeature5,
        conf: f64,
    ) -> Result<EntityEmbedding> {
        let mut tape = Tape::new();
        let mut row = |v: &[f64]| -> Result<Var> { Ok(tape.constant(Matrix::row_vector(v.to_vec())?)) };
        let (a, b, c, d, e) = (row(x_tf)?, row(x_ft)?, row(x_ph)?, row(s)?, row(&[conf])?);
        let out = self.embed_ocr(&mut tape, store, a, b, c, d, e)?;
        Ok(EntityEmbedding {
            kind: EntityKind::Ocr,
            vec: tape.value(out).data().to_vec(),
        })
    }

    /// Single-concept embedding.
    pub fn concept_embedding(&self, store: &ParamStore, ft: &[f64], score: f64) -> Result<EntityEmbedding> {
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("concept score {score}")));
        }
        let mut tape = Tape::new();
        let f = tape.constant(Matrix::row_vector(ft.to_vec())?);
        let s = tape.constant(Matrix::scalar(score));
        let out = self.embed_concept(&mut tape, store, f, s)?;
        Ok(EntityEmbedding {
            kind: EntityKind::Concept,
            vec: tape.value(out).data().to_vec(),
        })
    }
}
