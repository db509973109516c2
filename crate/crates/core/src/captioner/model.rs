//! Parameters and forward passes of the captioning model.
//!
//! Entities are encoded once per record: depth-aware feature updating
//! refreshes the OCR appearance rows, semantic alignment refreshes the OCR
//! subword rows, and the three entity kinds are embedded into width `t`.
//! The multimodal transformer then runs over `[objects | ocr | concepts |
//! decoder steps]` and the output at each decoder step is scored against the
//! vocabulary and, through a bilinear pointer, against every OCR token.

use crate::defum::DefumParams;
use crate::error::{Error, Result};
use crate::features::EmbedParams;
use crate::ingest::Vocabulary;
use crate::numerics::layers::{EncoderLayerParams, LinearParams, MASKED};
use crate::numerics::{Matrix, ParamId, ParamStore, SplitMix64, Tape, Var};
use crate::sgam::SgamParams;

use super::prepare::PreparedScene;
use super::ModelConfig;

#[derive(Debug, Clone)]
pub struct MmtParams {
    pub layers: Vec<EncoderLayerParams>,
    /// `|V| x t` embeddings of previously emitted vocabulary words.
    pub word_table: ParamId,
    /// `max_len x t` learned step embeddings.
    pub positions: ParamId,
    /// `t -> |V|` vocabulary classifier.
    pub vocab_head: LinearParams,
    /// `t x t` bilinear pointer weight.
    pub pointer_weight: ParamId,
    /// `1 x 1` pointer bias.
    pub pointer_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub embed: EmbedParams,
    pub defum: DefumParams,
    pub sgam: SgamParams,
    pub mmt: MmtParams,
}

/// Tape handles for one record's entity embeddings.
#[derive(Debug, Clone, Copy)]
pub struct EntityVars {
    pub objects: Var,
    pub ocr: Var,
    pub concepts: Option<Var>,
    pub num_objects: usize,
    pub num_ocr: usize,
    pub num_concepts: usize,
}

impl EntityVars {
    pub fn len(&self) -> usize {
        self.num_objects + self.num_ocr + self.num_concepts
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies the values onto another tape as constants.
    pub fn detach(&self, from: &Tape, to: &mut Tape) -> EntityVars {
        EntityVars {
            objects: to.constant(from.value(self.objects).clone()),
            ocr: to.constant(from.value(self.ocr).clone()),
            concepts: self.concepts.map(|c| to.constant(from.value(c).clone())),
            ..*self
        }
    }
}

/// Additive attention mask for `entities` entity positions followed by
/// `steps` decoder positions.
pub fn mmt_mask(entities: usize, steps: usize) -> Matrix {
    let len = entities + steps;
    let mut m = Matrix::zeros(len, len);
    for i in 0..len {
        for j in entities..len {
            let visible = i >= entities && j <= i;
            if !visible {
                m.set(i, j, MASKED);
            }
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Appearance feature width of objects and OCR tokens.
    pub feature_dim: usize,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl CaptionModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(Error::Argument("feature width must be positive".into()));
        }
        let t = config.t;
        let mut rng = SplitMix64::new(config.seed);
        let mut store = ParamStore::new();
        let embed = EmbedParams::register(&mut store, &mut rng, feature_dim, t)?;
        let defum = DefumParams::register(
            &mut store,
            &mut rng,
            feature_dim,
            config.defum_layers,
            config.defum_heads_for(feature_dim),
            config.depth_heads,
        )?;
        let sgam = SgamParams::register(&mut store, &mut rng, config.sgam_softmax)?;
        let layers = (0..config.mmt_layers)
            .map(|i| EncoderLayerParams::register(&mut store, &mut rng, &format!("mmt.layer{i}"), t, config.heads))
            .collect::<Result<Vec<_>>>()?;
        let v = vocab.len();
        let mmt = MmtParams {
            layers,
            word_table: store.add("decoder.word_table", rng.xavier(v, t))?,
            positions: store.add("decoder.positions", rng.xavier(config.max_len, t))?,
            vocab_head: LinearParams::register(&mut store, &mut rng, "head.vocab", t, v, true)?,
            pointer_weight: store.add("head.pointer_weight", rng.xavier(t, t))?,
            pointer_bias: store.add("head.pointer_bias", Matrix::zeros(1, 1))?,
        };
        Ok(Self {
            config,
            vocab,
            feature_dim,
            store,
            params: ModelParams {
                embed,
                defum,
                sgam,
                mmt,
            },
        })
    }

    /// Sets the vocabulary classifier and pointer weights and biases to zero.
    pub fn zero_heads(&mut self) {
        let m = &self.params.mmt;
        let mut ids = vec![m.vocab_head.weight, m.pointer_weight, m.pointer_bias];
        ids.extend(m.vocab_head.bias);
        for id in ids {
            let (r, c) = self.store.get(id).shape();
            *self.store.get_mut(id) = Matrix::zeros(r, c);
        }
    }

    /// Scores per step: `|V|` vocabulary logits then `M` pointer scores.
    pub fn num_outputs(&self, num_ocr: usize) -> usize {
        self.vocab.len() + num_ocr
    }

    pub fn encode_entities(&self, tape: &mut Tape, scene: &PreparedScene) -> Result<EntityVars> {
        if scene.feature_dim() != self.feature_dim {
            return Err(Error::Validation {
                record: scene.id.clone(),
                field: "feat".into(),
                msg: format!(
                    "width {} but the model expects {}",
                    scene.feature_dim(),
                    self.feature_dim
                ),
            });
        }
        let p = &self.params;
        let store = &self.store;
        let x_of = tape.constant(scene.object_features.clone());
        let x_tf = tape.constant(scene.ocr_features.clone());
        let r = tape.constant(scene.relative_depth());
        let (_, x_tf_upd) = p.defum.defum_update(tape, store, x_of, x_tf, Some(r))?;

        let voc_ft = tape.constant(scene.concepts.vectors());
        let x_ft = tape.constant(scene.ocr_subword.clone());
        let x_ft_upd = p.sgam.align(tape, store, voc_ft, x_ft)?;

        let obj_s = tape.constant(scene.object_spatial.clone());
        let objects = p.embed.embed_object(tape, store, x_of, obj_s)?;
        let x_ph = tape.constant(scene.ocr_phoc.clone());
        let ocr_s = tape.constant(scene.ocr_spatial.clone());
        let conf = tape.constant(scene.ocr_conf.clone());
        let ocr = p.embed.embed_ocr(tape, store, x_tf_upd, x_ft_upd, x_ph, ocr_s, conf)?;
        let concepts = if scene.concepts.is_empty() {
            None
        } else {
            let score = tape.constant(scene.concepts.scores());
            Some(p.embed.embed_concept(tape, store, voc_ft, score)?)
        };
        Ok(EntityVars {
            objects,
            ocr,
            concepts,
            num_objects: scene.num_objects(),
            num_ocr: scene.num_ocr(),
            num_concepts: scene.concepts.len(),
        })
    }

    /// Decoder inputs for previously emitted outputs `prev` (indices in the
    /// `|V| + M` output space): the word-table row or the copied OCR
    /// token's entity embedding, plus the step embedding.
    pub fn decoder_inputs(&self, tape: &mut Tape, entities: &EntityVars, prev: &[usize]) -> Result<Var> {
        let steps = prev.len();
        if steps == 0 || steps > self.config.max_len {
            return Err(Error::Argument(format!(
                "{steps} decoder steps; need 1..={}",
                self.config.max_len
            )));
        }
        let limit = self.num_outputs(entities.num_ocr);
        if let Some(&bad) = prev.iter().find(|&&i| i >= limit) {
            return Err(Error::Index {
                what: "previous output",
                index: bad,
                len: limit,
            });
        }
        let table = tape.param(&self.store, self.params.mmt.word_table);
        let sources = tape.concat_rows(&[table, entities.ocr])?;
        let tokens = tape.gather_rows(sources, prev)?;
        let pos = tape.param(&self.store, self.params.mmt.positions);
        let pos = tape.slice_rows(pos, 0, steps)?;
        tape.add(tokens, pos)
    }

    /// Runs the multimodal transformer; returns `(decoder outputs, updated
    /// OCR rows)`.
    pub fn mmt_forward(&self, tape: &mut Tape, entities: &EntityVars, dec_emb: Var) -> Result<(Var, Var)> {
        let steps = tape.shape(dec_emb).0;
        let mut parts = vec![entities.objects, entities.ocr];
        parts.extend(entities.concepts);
        parts.push(dec_emb);
        let mut h = tape.concat_rows(&parts)?;
        let n_ent = entities.len();
        let mask = tape.constant(mmt_mask(n_ent, steps));
        for layer in &self.params.mmt.layers {
            h = layer.apply(tape, &self.store, h, Some(mask))?;
        }
        let dec_out = tape.slice_rows(h, n_ent, steps)?;
        let x_tocr = tape.slice_rows(h, entities.num_objects, entities.num_ocr)?;
        Ok((dec_out, x_tocr))
    }

    /// `steps x (|V| + M)` scores: vocabulary logits then pointer scores.
    pub fn predict_scores(&self, tape: &mut Tape, dec_out: Var, x_tocr: Var) -> Result<Var> {
        let m = &self.params.mmt;
        let vocab = m.vocab_head.apply(tape, &self.store, dec_out)?;
        let w = tape.param(&self.store, m.pointer_weight);
        let b = tape.param(&self.store, m.pointer_bias);
        let proj = tape.matmul(dec_out, w)?;
        let ocr_t = tape.transpose(x_tocr);
        let ptr = tape.matmul(proj, ocr_t)?;
        let ptr = tape.add_broadcast(ptr, b)?;
        tape.concat_cols(&[vocab, ptr])
    }

    /// Scores for decoder inputs `[<s>, targets[..T-1]]`.
    pub fn teacher_forced_scores(&self, tape: &mut Tape, scene: &PreparedScene, targets: &[usize]) -> Result<Var> {
        let entities = self.encode_entities(tape, scene)?;
        self.scores_for_inputs(tape, &entities, &decoder_history(targets))
    }

    pub fn scores_for_inputs(&self, tape: &mut Tape, entities: &EntityVars, prev: &[usize]) -> Result<Var> {
        let dec = self.decoder_inputs(tape, entities, prev)?;
        let (dec_out, x_tocr) = self.mmt_forward(tape, entities, dec)?;
        self.predict_scores(tape, dec_out, x_tocr)
    }

    /// Mean cross-entropy of one caption under teacher forcing.
    pub fn caption_loss(&self, tape: &mut Tape, scene: &PreparedScene, targets: &[usize]) -> Result<Var> {
        let scores = self.teacher_forced_scores(tape, scene, targets)?;
        tape.cross_entropy(scores, targets)
    }
}

/// Decoder inputs under teacher forcing: `<s>` then all targets but the last.
pub fn decoder_history(targets: &[usize]) -> Vec<usize> {
    let mut prev = Vec::with_capacity(targets.len());
    prev.push(crate::ingest::vocab::BOS);
    prev.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
    prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::prepare::{align_targets, prepare_all};
    use crate::ingest::{generate_fixtures, FixtureConfig};

    fn setup(cfg: ModelConfig) -> (CaptionModel, Vec<PreparedScene>) {
        let set = generate_fixtures(11, 2, &FixtureConfig::default()).unwrap();
        let scenes = prepare_all(&set.records, &set.depth_maps, &set.embeddings, &cfg).unwrap();
        let model = CaptionModel::new(cfg, set.vocab, 16).unwrap();
        (model, scenes)
    }

    fn desk() -> ModelConfig {
        ModelConfig {
            t: 16,
            heads: 2,
            mmt_layers: 1,
            defum_layers: 1,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn mask_layout() {
        let m = mmt_mask(2, 3);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 2), MASKED);
        assert_eq!(m.get(2, 0), 0.0);
        assert_eq!(m.get(3, 2), 0.0);
        assert_eq!(m.get(3, 4), MASKED);
        assert_eq!(m.get(4, 4), 0.0);
    }

    #[test]
    fn zero_heads_give_uniform_loss() {
        let (mut model, scenes) = setup(desk());
        model.zero_heads();
        let s = &scenes[0];
        let targets = align_targets(&s.captions[0], &model.vocab, &s.ocr_surfaces, 30, false);
        let mut tape = Tape::new();
        let loss = model.caption_loss(&mut tape, s, &targets).unwrap();
        let want = ((model.vocab.len() + s.num_ocr()) as f64).ln();
        assert!((tape.value(loss).item() - want).abs() < 1e-9);
        assert!((want - 72f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn causal_and_isolated() {
        let (model, scenes) = setup(desk());
        let s = &scenes[0];
        let run = |prev: &[usize]| {
            let mut tape = Tape::new();
            let e = model.encode_entities(&mut tape, s).unwrap();
            let dec = model.decoder_inputs(&mut tape, &e, prev).unwrap();
            let (out, ocr) = model.mmt_forward(&mut tape, &e, dec).unwrap();
            (tape.value(out).clone(), tape.value(ocr).clone())
        };
        let a: Vec<usize> = vec![1, 5, 9, 12, 20, 7, 8];
        let mut b = a.clone();
        b[5] = 64 + 2;
        let (oa, ta) = run(&a);
        let (ob, tb) = run(&b);
        assert_eq!(oa.slice_rows(0, 5), ob.slice_rows(0, 5));
        assert_ne!(oa.row(5), ob.row(5));
        assert_eq!(ta, tb);
    }

    #[test]
    fn copied_input_reuses_entity_embedding() {
        let (model, scenes) = setup(desk());
        let s = &scenes[0];
        let mut tape = Tape::new();
        let e = model.encode_entities(&mut tape, s).unwrap();
        let v = model.vocab.len();
        let dec = model.decoder_inputs(&mut tape, &e, &[1, v + 3, 9, 9]).unwrap();
        let dec = tape.value(dec).clone();
        let pos = model.store.get(model.params.mmt.positions);
        let ocr = tape.value(e.ocr);
        for j in 0..16 {
            assert!((dec.get(1, j) - pos.get(1, j) - ocr.get(3, j)).abs() < 1e-15);
            let diff = dec.get(3, j) - dec.get(2, j);
            assert!((diff - (pos.get(3, j) - pos.get(2, j))).abs() < 1e-15);
        }
        assert!(model.decoder_inputs(&mut tape, &e, &[v + 8]).is_err());
    }

    #[test]
    fn unused_word_row_has_zero_gradient() {
        let (model, scenes) = setup(desk());
        let s = &scenes[0];
        let targets = align_targets(&s.captions[0], &model.vocab, &s.ocr_surfaces, 30, false);
        let mut tape = Tape::new();
        let loss = model.caption_loss(&mut tape, s, &targets).unwrap();
        let g = tape.backward(loss).unwrap();
        let table = g.get(model.params.mmt.word_table).unwrap();
        let used = decoder_history(&targets);
        for row in 0..model.vocab.len() {
            let zero = table.row(row).iter().all(|&x| x == 0.0);
            assert_eq!(zero, !used.contains(&row), "row {row}");
        }
    }

    #[test]
    fn zero_heads_pick_index_zero() {
        let (mut model, scenes) = setup(desk());
        model.zero_heads();
        let s = &scenes[0];
        let mut tape = Tape::new();
        let e = model.encode_entities(&mut tape, s).unwrap();
        let scores = model.scores_for_inputs(&mut tape, &e, &[1]).unwrap();
        let row = tape.value(scores).row(0).to_vec();
        assert_eq!(row.len(), model.vocab.len() + 8);
        assert_eq!(crate::numerics::argmax(&row), 0);
    }
}
