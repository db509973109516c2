//! End-to-end behaviour of the captioner over generated fixtures.

use device_core::captioner::prepare::{align_targets, prepare_all};
use device_core::captioner::{CaptionModel, ModelConfig, PreparedScene, TokenSource};
use device_core::ingest::{generate_fixtures, FixtureConfig, FixtureSet};
use device_core::numerics::{Matrix, SplitMix64, Tape};
use proptest::prelude::*;

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        t: 16,
        heads: 2,
        mmt_layers: 1,
        defum_layers: 1,
        seed,
        ..ModelConfig::desk()
    }
}

fn build(seed: u64, n: usize, fx: &FixtureConfig, cfg: ModelConfig) -> (CaptionModel, Vec<PreparedScene>, FixtureSet) {
    let set = generate_fixtures(seed, n, fx).unwrap();
    let scenes = prepare_all(&set.records, &set.depth_maps, &set.embeddings, &cfg).unwrap();
    let model = CaptionModel::new(cfg, set.vocab.clone(), fx.feature_dim).unwrap();
    (model, scenes, set)
}

#[test]
fn checkpoint_file_preserves_generations() {
    let (model, scenes, _) = build(21, 3, &FixtureConfig::default(), small_config(4));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.save(&path).unwrap();
    let back = CaptionModel::load(&path).unwrap();
    assert_eq!(back.to_checkpoint_bytes(), model.to_checkpoint_bytes());
    for s in &scenes {
        assert_eq!(back.generate(s).unwrap(), model.generate(s).unwrap());
    }
}

#[test]
fn scenes_of_other_width_are_rejected() {
    let (model, _, _) = build(2, 1, &FixtureConfig::default(), small_config(1));
    let fx = FixtureConfig {
        feature_dim: 12,
        ..FixtureConfig::default()
    };
    let set = generate_fixtures(2, 1, &fx).unwrap();
    let scenes = prepare_all(&set.records, &set.depth_maps, &set.embeddings, &model.config).unwrap();
    assert!(model.generate(&scenes[0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_heads_calibrate_to_uniform(seed in any::<u64>(), m in 1usize..10, objects in 1usize..5) {
        let fx = FixtureConfig {
            ocr_per_image: m,
            objects_per_image: objects,
            ..FixtureConfig::default()
        };
        let (mut model, scenes, _) = build(seed, 1, &fx, small_config(seed));
        model.zero_heads();
        let s = &scenes[0];
        let targets = align_targets(&s.captions[0], &model.vocab, &s.ocr_surfaces, 30, false);
        let mut tape = Tape::new();
        let loss = model.caption_loss(&mut tape, s, &targets).unwrap();
        let want = ((model.vocab.len() + m) as f64).ln();
        prop_assert!((tape.value(loss).item() - want).abs() <= 1e-9);
    }

    #[test]
    fn generations_stay_in_vocab_and_ocr(seed in any::<u64>(), bias in -4.0f64..4.0) {
        let (mut model, scenes, _) = build(seed, 2, &FixtureConfig::default(), small_config(seed));
        let b = model.params.mmt.pointer_bias;
        *model.store.get_mut(b) = Matrix::scalar(bias);
        let mut rng = SplitMix64::new(seed);
        let w = model.params.mmt.pointer_weight;
        let (r, c) = model.store.get(w).shape();
        *model.store.get_mut(w) = rng.matrix(r, c, -1.0, 1.0);
        for s in &scenes {
            let hyp = model.generate(s).unwrap();
            prop_assert!(hyp.tokens.len() <= 30);
            for t in &hyp.tokens {
                match t.source {
                    TokenSource::Vocab(i) => prop_assert_eq!(model.vocab.word(i), Some(t.surface.as_str())),
                    TokenSource::Ocr(j) => prop_assert_eq!(&s.ocr_surfaces[j], &t.surface),
                }
            }
        }
    }
}
