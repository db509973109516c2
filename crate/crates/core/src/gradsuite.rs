//! Finite-difference gradient checks for each trainable module and for the
//! whole captioner.
//!
//! Module objectives are `sum(output * C)` for a fixed random `C`; the
//! captioner objective is the teacher-forced loss of one synthetic scene.

use crate::captioner::prepare::{align_targets, prepare_all};
use crate::captioner::{CaptionModel, ModelConfig};
use crate::defum::DefumParams;
use crate::error::Result;
use crate::features::phoc::PHOC_DIM;
use crate::features::EmbedParams;
use crate::ingest::{generate_fixtures, FixtureConfig, SUBWORD_DIM};
use crate::numerics::{grad_check, GradCheckOptions, GradCheckReport, Matrix, ParamStore, SplitMix64, Tape, Var};
use crate::sgam::{SgamParams, SoftmaxAxis};

/// Entries sampled per parameter matrix; the 300 x 300 alignment weights
/// alone hold 90k entries.
pub const ENTRIES_PER_PARAM: usize = 12;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub module: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn options(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        max_entries_per_param: Some(ENTRIES_PER_PARAM),
        seed,
        ..GradCheckOptions::default()
    }
}

fn weighted_sum(tape: &mut Tape, out: Var, weights: &Matrix) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul_elem(out, w)?;
    Ok(tape.sum(p))
}

fn binary(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
    rng.matrix(rows, cols, 0.0, 1.0)
        .map(|v| if v < 0.1 { 1.0 } else { 0.0 })
}

/// Object, OCR and concept embeddings (d = 6, t = 8).
pub fn features_suite(seed: u64) -> Result<GradCheckReport> {
    let (d, t, n, m, k) = (6, 8, 2, 3, 2);
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::new();
    let p = EmbedParams::register(&mut store, &mut rng, d, t)?;
    let x_of = rng.matrix(n, d, -1.0, 1.0);
    let s_obj = rng.matrix(n, 5, 0.0, 1.0);
    let x_tf = rng.matrix(m, d, -1.0, 1.0);
    let x_ft = rng.matrix(m, SUBWORD_DIM, -0.3, 0.3);
    let x_ph = binary(&mut rng, m, PHOC_DIM);
    let s_ocr = rng.matrix(m, 5, 0.0, 1.0);
    let conf = rng.matrix(m, 1, 0.2, 1.0);
    let voc = rng.matrix(k, SUBWORD_DIM, -0.3, 0.3);
    let score = rng.matrix(k, 1, 0.0, 1.0);
    let c = rng.matrix(n + m + k, t, -1.0, 1.0);
    let f = |tape: &mut Tape, store: &ParamStore| {
        let mut c_ = |m: &Matrix| tape.constant(m.clone());
        let (a, b) = (c_(&x_of), c_(&s_obj));
        let (e, g, h, i, j) = (c_(&x_tf), c_(&x_ft), c_(&x_ph), c_(&s_ocr), c_(&conf));
        let (u, v) = (c_(&voc), c_(&score));
        let o = p.embed_object(tape, store, a, b)?;
        let r = p.embed_ocr(tape, store, e, g, h, i, j)?;
        let q = p.embed_concept(tape, store, u, v)?;
        let all = tape.concat_rows(&[o, r, q])?;
        weighted_sum(tape, all, &c)
    };
    grad_check(&store, None, f, &options(seed))
}

/// Depth-aware attention plus one encoder layer (d = 8, 2 + 3 entities).
pub fn defum_suite(seed: u64) -> Result<GradCheckReport> {
    let (d, n, m) = (8, 2, 3);
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::new();
    let p = DefumParams::register(&mut store, &mut rng, d, 1, 2, 1)?;
    let x_of = rng.matrix(n, d, -1.0, 1.0);
    let x_tf = rng.matrix(m, d, -1.0, 1.0);
    let dv: Vec<_> = (0..n + m)
        .map(|_| crate::depthgeom::DepthValue(rng.range(1, 255) as u8))
        .collect();
    let r = crate::depthgeom::relative_depth_matrix(&dv);
    let c = rng.matrix(n + m, d, -1.0, 1.0);
    let f = |tape: &mut Tape, store: &ParamStore| {
        let a = tape.constant(x_of.clone());
        let b = tape.constant(x_tf.clone());
        let rv = tape.constant(r.clone());
        let (o, t) = p.defum_update(tape, store, a, b, Some(rv))?;
        let all = tape.concat_rows(&[o, t])?;
        weighted_sum(tape, all, &c)
    };
    grad_check(&store, None, f, &options(seed))
}

/// Semantic alignment, K = 2 concepts, M = 3 tokens.
pub fn sgam_suite(seed: u64, axis: SoftmaxAxis) -> Result<GradCheckReport> {
    let (k, m) = (2, 3);
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::new();
    let p = SgamParams::register(&mut store, &mut rng, axis)?;
    // Large inputs keep the attention away from uniform so the weight
    // gradients are not vanishingly small.
    let voc = rng.matrix(k, SUBWORD_DIM, -1.0, 1.0);
    let x_ft = rng.matrix(m, SUBWORD_DIM, -1.0, 1.0);
    let c = rng.matrix(m, SUBWORD_DIM, -1.0, 1.0);
    let f = |tape: &mut Tape, store: &ParamStore| {
        let v = tape.constant(voc.clone());
        let x = tape.constant(x_ft.clone());
        let out = p.align(tape, store, v, x)?;
        weighted_sum(tape, out, &c)
    };
    grad_check(&store, None, f, &options(seed))
}

/// Micro configuration for the end-to-end check: t = 16, one layer
/// everywhere, K = 2.
pub fn micro_config(seed: u64) -> ModelConfig {
    ModelConfig {
        t: 16,
        heads: 2,
        mmt_layers: 1,
        defum_layers: 1,
        k: 2,
        seed,
        ..ModelConfig::desk()
    }
}

/// Synthetic scene sizes for the end-to-end check: one object, three OCR
/// tokens (M = 3), four concept candidates.
pub fn micro_fixture() -> FixtureConfig {
    FixtureConfig {
        vocab_size: 16,
        feature_dim: 8,
        objects_per_image: 1,
        ocr_per_image: 3,
        concepts_per_image: 4,
        min_caption_words: 3,
        max_caption_words: 4,
        ..FixtureConfig::default()
    }
}

/// Teacher-forced loss of one synthetic scene under `config`.
pub fn captioner_suite(seed: u64, config: &ModelConfig) -> Result<GradCheckReport> {
    let fx = micro_fixture();
    let set = generate_fixtures(seed, 1, &fx)?;
    let config = ModelConfig { seed, ..config.clone() };
    let scenes = prepare_all(&set.records, &set.depth_maps, &set.embeddings, &config)?;
    let model = CaptionModel::new(config, set.vocab, fx.feature_dim)?;
    let scene = &scenes[0];
    let targets = align_targets(
        &scene.captions[0],
        &model.vocab,
        &scene.ocr_surfaces,
        model.config.max_len,
        model.config.prefer_copy,
    );
    let f = |tape: &mut Tape, store: &ParamStore| {
        let probe = CaptionModel {
            store: store.clone(),
            ..model.clone()
        };
        probe.caption_loss(tape, scene, &targets)
    };
    grad_check(&model.store, None, f, &options(seed))
}

/// Every suite for each seed.
pub fn run_all(seeds: &[u64], config: &ModelConfig) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for &seed in seeds {
        out.push(SuiteResult {
            module: "features",
            seed,
            report: features_suite(seed)?,
        });
        out.push(SuiteResult {
            module: "defum",
            seed,
            report: defum_suite(seed)?,
        });
        out.push(SuiteResult {
            module: "sgam",
            seed,
            report: sgam_suite(seed, config.sgam_softmax)?,
        });
        out.push(SuiteResult {
            module: "captioner",
            seed,
            report: captioner_suite(seed, config)?,
        });
    }
    Ok(out)
}
