//! Visual concept selection and semantic alignment of OCR subword vectors.
//!
//! ```text
//! Q_S = voc W_QS            (K x 300)
//! K_S = x_ft W_KS           (M x 300)
//! Q'  = attention(Q_S, K_S) applied to voc   (M x 300)
//! x_ft' = l2_normalize_rows(x_ft + Q')
//! ```
//!
//! The softmax axis of the `K x M` score matrix is configurable. With
//! [`SoftmaxAxis::Concepts`] (the default) each OCR token receives a convex
//! combination of concept vectors; with [`SoftmaxAxis::Tokens`] each concept
//! distributes unit mass across the tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::scene::MAX_CONCEPT_CANDIDATES;
use crate::ingest::{ConceptCandidate, EmbeddingTable, SUBWORD_DIM};
use crate::numerics::{Matrix, ParamId, ParamStore, SplitMix64, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxAxis {
    /// Normalize over concepts for each token.
    #[default]
    Concepts,
    /// Normalize over tokens for each concept.
    Tokens,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub word: String,
    pub score: f64,
    pub ft: Vec<f64>,
}

/// Selected concepts, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptSet {
    pub concepts: Vec<Concept>,
}

impl ConceptSet {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// `K x 300`.
    pub fn vectors(&self) -> Matrix {
        let data = self.concepts.iter().flat_map(|c| c.ft.iter().copied()).collect();
        Matrix::from_parts(self.len(), SUBWORD_DIM, data)
    }

    /// `K x 1`.
    pub fn scores(&self) -> Matrix {
        Matrix::from_parts(self.len(), 1, self.concepts.iter().map(|c| c.score).collect())
    }
}

/// Keeps the `k` best candidates by score (descending), breaking ties by
/// word (ascending), and looks each one up in `table`.
pub fn select_concepts(
    candidates: &[ConceptCandidate],
    k: usize,
    table: &EmbeddingTable,
    allow_oov: bool,
) -> Result<ConceptSet> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    if candidates.len() > MAX_CONCEPT_CANDIDATES {
        return Err(Error::Argument(format!(
            "{} concept candidates, at most {MAX_CONCEPT_CANDIDATES} allowed",
            candidates.len()
        )));
    }
    if let Some(c) = candidates.iter().find(|c| !c.score.is_finite()) {
        return Err(Error::NonFinite(format!("score of concept {:?}", c.word)));
    }
    let mut ranked: Vec<&ConceptCandidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
    let concepts = ranked
        .into_iter()
        .take(k)
        .map(|c| {
            Ok(Concept {
                word: c.word.clone(),
                score: c.score,
                ft: table.subword_vector(&c.word, allow_oov)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConceptSet { concepts })
}

#[derive(Debug, Clone)]
pub struct SgamParams {
    pub w_qs: ParamId,
    pub w_ks: ParamId,
    pub axis: SoftmaxAxis,
}

impl SgamParams {
    pub fn register(store: &mut ParamStore, rng: &mut SplitMix64, axis: SoftmaxAxis) -> Result<Self> {
        Ok(Self {
            w_qs: store.add("sgam.w_qs", rng.xavier(SUBWORD_DIM, SUBWORD_DIM))?,
            w_ks: store.add("sgam.w_ks", rng.xavier(SUBWORD_DIM, SUBWORD_DIM))?,
            axis,
        })
    }

    /// `voc`: K x 300 concept vectors, `x_ft`: M x 300 OCR subword vectors.
    /// With no concepts the output is `l2_normalize_rows(x_ft)`.
    pub fn align(&self, tape: &mut Tape, store: &ParamStore, voc: Var, x_ft: Var) -> Result<Var> {
        let (k, vc) = tape.shape(voc);
        let (m, fc) = tape.shape(x_ft);
        if vc != SUBWORD_DIM || fc != SUBWORD_DIM {
            return Err(Error::shape("sgam_align", (k, vc), (m, fc)));
        }
        if m == 0 {
            return Err(Error::Argument(
                "semantic alignment needs at least one OCR token".into(),
            ));
        }
        if k == 0 {
            return Ok(tape.l2_normalize_rows(x_ft));
        }
        let wq = tape.param(store, self.w_qs);
        let wk = tape.param(store, self.w_ks);
        let q = tape.matmul(voc, wq)?;
        let keys = tape.matmul(x_ft, wk)?;
        let scale = 1.0 / (SUBWORD_DIM as f64).sqrt();
        let injected = match self.axis {
            SoftmaxAxis::Concepts => {
                let qt = tape.transpose(q);
                let logits = tape.matmul(keys, qt)?;
                let logits = tape.scale(logits, scale);
                let weights = tape.softmax_rows(logits);
                tape.matmul(weights, voc)?
            }
            SoftmaxAxis::Tokens => {
                let kt = tape.transpose(keys);
                let logits = tape.matmul(q, kt)?;
                let logits = tape.scale(logits, scale);
                let weights = tape.softmax_rows(logits);
                let wt = tape.transpose(weights);
                tape.matmul(wt, voc)?
            }
        };
        let sum = tape.add(x_ft, injected)?;
        Ok(tape.l2_normalize_rows(sum))
    }

    /// Value-level form of [`SgamParams::align`].
    pub fn sgam_align(&self, store: &ParamStore, voc: &Matrix, x_ft: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let v = tape.constant(voc.clone());
        let x = tape.constant(x_ft.clone());
        let out = self.align(&mut tape, store, v, x)?;
        Ok(tape.value(out).clone())
    }
}
