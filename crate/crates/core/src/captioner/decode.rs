//! Greedy autoregressive decoding.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::vocab::{BOS, EOS};
use crate::numerics::{argmax, Tape};

use super::model::CaptionModel;
use super::prepare::PreparedScene;

/// Where an emitted token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", content = "index", rename_all = "lowercase")]
pub enum TokenSource {
    Vocab(usize),
    Ocr(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedToken {
    pub surface: String,
    #[serde(flatten)]
    pub source: TokenSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaptionHypothesis {
    pub tokens: Vec<EmittedToken>,
    /// `true` when decoding stopped at `</s>` rather than the length cap.
    pub terminated: bool,
}

impl CaptionHypothesis {
    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn sources(&self) -> Vec<TokenSource> {
        self.tokens.iter().map(|t| t.source).collect()
    }
}

impl CaptionModel {
    /// Maps an output index to its surface and source.
    pub fn resolve_output(&self, scene: &PreparedScene, index: usize) -> EmittedToken {
        let v = self.vocab.len();
        if index < v {
            EmittedToken {
                surface: self.vocab.word(index).expect("index below |V|").to_string(),
                source: TokenSource::Vocab(index),
            }
        } else {
            EmittedToken {
                surface: scene.ocr_surfaces[index - v].clone(),
                source: TokenSource::Ocr(index - v),
            }
        }
    }

    /// Greedy decoding from `<s>`: at most `max_len` steps, stopping early
    /// when `</s>` wins (it is not emitted). Ties go to the lowest index.
    pub fn generate(&self, scene: &PreparedScene) -> Result<CaptionHypothesis> {
        let mut enc_tape = Tape::new();
        let entities = self.encode_entities(&mut enc_tape, scene)?;
        let mut prev = vec![BOS];
        let mut hyp = CaptionHypothesis::default();
        for _ in 0..self.config.max_len {
            let mut tape = Tape::new();
            let ent = entities.detach(&enc_tape, &mut tape);
            let scores = self.scores_for_inputs(&mut tape, &ent, &prev)?;
            let last = tape.value(scores).row(prev.len() - 1);
            let next = argmax(last);
            if next == EOS {
                hyp.terminated = true;
                break;
            }
            hyp.tokens.push(self.resolve_output(scene, next));
            prev.push(next);
        }
        Ok(hyp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioner::prepare::prepare_all;
    use crate::captioner::ModelConfig;
    use crate::ingest::{generate_fixtures, FixtureConfig};
    use crate::numerics::Matrix;

    fn setup() -> (CaptionModel, Vec<PreparedScene>) {
        let cfg = ModelConfig {
            t: 16,
            heads: 2,
            mmt_layers: 1,
            defum_layers: 1,
            ..ModelConfig::desk()
        };
        let set = generate_fixtures(5, 3, &FixtureConfig::default()).unwrap();
        let scenes = prepare_all(&set.records, &set.depth_maps, &set.embeddings, &cfg).unwrap();
        (CaptionModel::new(cfg, set.vocab, 16).unwrap(), scenes)
    }

    #[test]
    fn zero_heads_emit_pad_until_cap() {
        let (mut model, scenes) = setup();
        model.zero_heads();
        let hyp = model.generate(&scenes[0]).unwrap();
        assert_eq!(hyp.tokens.len(), 30);
        assert!(!hyp.terminated);
        assert!(hyp
            .tokens
            .iter()
            .all(|t| t.source == TokenSource::Vocab(0) && t.surface == "<pad>"));
    }

    #[test]
    fn rigged_pointer_copies_ocr_three() {
        let (mut model, scenes) = setup();
        model.zero_heads();
        let s = &scenes[0];
        let v = model.vocab.len();
        let t = model.config.t;
        let mut tape = Tape::new();
        let e = model.encode_entities(&mut tape, s).unwrap();
        let dec = model.decoder_inputs(&mut tape, &e, &[BOS]).unwrap();
        let (d, x) = model.mmt_forward(&mut tape, &e, dec).unwrap();
        let (d0, x3) = (tape.value(d).row(0).to_vec(), tape.value(x).row(3).to_vec());

        // W = 10 d0^T x3 / |d0|^2 turns step 0's pointer scores into 10 x3.x_m.
        let n2: f64 = d0.iter().map(|a| a * a).sum();
        let mut w = Matrix::zeros(t, t);
        for i in 0..t {
            for j in 0..t {
                w.set(i, j, 10.0 * d0[i] * x3[j] / n2);
            }
        }
        *model.store.get_mut(model.params.mmt.pointer_weight) = w;
        let bias = model.params.mmt.vocab_head.bias.unwrap();
        *model.store.get_mut(bias) = Matrix::filled(1, v, -1e3);

        let mut tape = Tape::new();
        let e = model.encode_entities(&mut tape, s).unwrap();
        let scores = model.scores_for_inputs(&mut tape, &e, &[BOS]).unwrap();
        assert_eq!(argmax(tape.value(scores).row(0)), v + 3);
        let first = &model.generate(s).unwrap().tokens[0];
        assert_eq!(first.source, TokenSource::Ocr(3));
        assert_eq!(first.surface, s.ocr_surfaces[3]);
    }

    #[test]
    fn closure_and_length() {
        let (model, scenes) = setup();
        for s in &scenes {
            let hyp = model.generate(s).unwrap();
            assert!(hyp.tokens.len() <= 30);
            for tok in &hyp.tokens {
                match tok.source {
                    TokenSource::Vocab(i) => assert_eq!(model.vocab.word(i), Some(tok.surface.as_str())),
                    TokenSource::Ocr(m) => assert_eq!(s.ocr_surfaces[m], tok.surface),
                }
            }
        }
    }

    #[test]
    fn source_json_shape() {
        let t = EmittedToken {
            surface: "kfc7".into(),
            source: TokenSource::Ocr(3),
        };
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"surface":"kfc7","source":"ocr","index":3}"#
        );
    }
}
