//! Deterministic synthetic corpus standing in for detector, OCR and depth
//! outputs.
//!
//! Layout of the output directory:
//!
//! ```text
//! records.jsonl     scene records, one per line
//! vocab.txt         reserved tokens then content words
//! embeddings.txt    300-d vectors for every vocabulary, OCR and concept word
//! depth/<id>.pgm    P5 depth maps
//! config.json       a desk-scale model config pointing at vocab.txt
//! ```
//!
//! Every caption mixes vocabulary words with at least one OCR token that is
//! absent from the vocabulary, so the copy head is needed to reproduce it.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embedding::{EmbeddingTable, SUBWORD_DIM};
use super::pgm::DepthMap;
use super::scene::{save_scene_records, BoundingBox, ConceptCandidate, ObjectEntry, OcrEntry, SceneRecord};
use super::vocab::{Vocabulary, RESERVED};
use crate::captioner::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    /// Total vocabulary size including the four reserved tokens.
    pub vocab_size: usize,
    /// Appearance feature width `d`.
    pub feature_dim: usize,
    pub objects_per_image: usize,
    pub ocr_per_image: usize,
    pub concepts_per_image: usize,
    pub width: u32,
    pub height: u32,
    pub min_caption_words: usize,
    pub max_caption_words: usize,
    /// Out-of-vocabulary OCR tokens copied into each caption.
    pub copies_per_caption: usize,
    pub captions_per_image: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            feature_dim: 16,
            objects_per_image: 4,
            ocr_per_image: 8,
            concepts_per_image: 8,
            width: 64,
            height: 48,
            min_caption_words: 4,
            max_caption_words: 7,
            copies_per_caption: 1,
            captions_per_image: 1,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.vocab_size < RESERVED.len() + 8 {
            return bad("vocab_size must leave at least 8 content words");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(1..=super::scene::MAX_OBJECTS).contains(&self.objects_per_image) {
            return bad("objects_per_image must be in 1..=100");
        }
        if !(1..=super::scene::MAX_OCR_TOKENS).contains(&self.ocr_per_image) {
            return bad("ocr_per_image must be in 1..=80");
        }
        if self.concepts_per_image > super::scene::MAX_CONCEPT_CANDIDATES {
            return bad("concepts_per_image must be at most 15");
        }
        if self.copies_per_caption == 0 || self.copies_per_caption > self.ocr_per_image {
            return bad("copies_per_caption must be in 1..=ocr_per_image");
        }
        if self.min_caption_words == 0 || self.min_caption_words > self.max_caption_words {
            return bad("caption word range is empty");
        }
        if self.width < 4 || self.height < 4 {
            return bad("images must be at least 4x4");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub records: Vec<SceneRecord>,
    pub depth_maps: Vec<DepthMap>,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub config: ModelConfig,
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn vocab_word(rng: &mut SplitMix64) -> String {
    let syllables = rng.range(2, 3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS[rng.below(ONSETS.len())], VOWELS[rng.below(VOWELS.len())]))
        .collect()
}

/// Consonant-heavy strings with a digit so they never collide with the
/// syllabic vocabulary words.
fn oov_word(rng: &mut SplitMix64) -> String {
    const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwxz";
    let len = rng.range(4, 6);
    let mut s: String = (0..len)
        .map(|_| CONSONANTS[rng.below(CONSONANTS.len())] as char)
        .collect();
    s.push(char::from(b'0' + rng.below(10) as u8));
    s
}

fn random_box(rng: &mut SplitMix64, width: u32, height: u32) -> BoundingBox {
    let w = rng.range(2, (width / 2) as usize) as u32;
    let h = rng.range(2, (height / 2) as usize) as u32;
    let x = rng.range(0, (width - w) as usize) as u32;
    let y = rng.range(0, (height - h) as usize) as u32;
    BoundingBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)
}

fn random_vector(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| round4(rng.uniform(-1.0, 1.0))).collect()
}

/// Builds the corpus in memory.
pub fn generate_fixtures(seed: u64, n_images: usize, config: &FixtureConfig) -> Result<FixtureSet> {
    if n_images == 0 {
        return Err(Error::Argument("n_images must be positive".into()));
    }
    config.validate()?;
    let mut rng = SplitMix64::new(seed);

    let mut content = Vec::new();
    let mut used = BTreeSet::new();
    while content.len() < config.vocab_size - RESERVED.len() {
        let w = vocab_word(&mut rng);
        if used.insert(w.clone()) {
            content.push(w);
        }
    }
    let vocab = Vocabulary::from_words(&content)?;

    let mut embeddings = EmbeddingTable::new();
    for w in &content {
        embeddings.insert(w, random_vector(&mut rng, SUBWORD_DIM))?;
    }

    let mut records = Vec::with_capacity(n_images);
    let mut depth_maps = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let id = format!("img{i:04}");
        let (width, height) = (config.width, config.height);

        let objects: Vec<ObjectEntry> = (0..config.objects_per_image)
            .map(|_| ObjectEntry {
                bbox: random_box(&mut rng, width, height),
                feat: random_vector(&mut rng, config.feature_dim),
            })
            .collect();

        // OCR surfaces: the copied OOV tokens, an OOV distractor when room
        // allows, then vocabulary distractors.
        let n_oov = (config.copies_per_caption + 1).min(config.ocr_per_image);
        let mut surfaces = Vec::with_capacity(config.ocr_per_image);
        while surfaces.len() < n_oov {
            let w = oov_word(&mut rng);
            if used.insert(w.clone()) {
                embeddings.insert(&w, random_vector(&mut rng, SUBWORD_DIM))?;
                surfaces.push(w);
            }
        }
        let copied: Vec<String> = surfaces[..config.copies_per_caption].to_vec();
        while surfaces.len() < config.ocr_per_image {
            let w = content[rng.below(content.len())].clone();
            if !surfaces.contains(&w) {
                surfaces.push(w);
            }
        }
        rng.shuffle(&mut surfaces);
        let ocr: Vec<OcrEntry> = surfaces
            .iter()
            .map(|s| OcrEntry {
                token: s.clone(),
                bbox: random_box(&mut rng, width, height),
                feat: random_vector(&mut rng, config.feature_dim),
                conf: round4(rng.uniform(0.5, 1.0)),
            })
            .collect();

        let mut captions = Vec::with_capacity(config.captions_per_image);
        let mut caption_words = Vec::new();
        for _ in 0..config.captions_per_image {
            let n_words = rng.range(config.min_caption_words, config.max_caption_words);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| content[rng.below(content.len())].clone())
                .collect();
            caption_words.extend(words.iter().cloned());
            for c in &copied {
                let at = rng.below(words.len() + 1);
                words.insert(at, c.clone());
            }
            captions.push(words.join(" "));
        }

        // Concept candidates overlap the caption's vocabulary words.
        let mut concepts: Vec<ConceptCandidate> = Vec::new();
        let mut pool: Vec<String> = caption_words.clone();
        rng.shuffle(&mut pool);
        for w in pool {
            if concepts.len() >= config.concepts_per_image {
                break;
            }
            if !concepts.iter().any(|c| c.word == w) {
                concepts.push(ConceptCandidate {
                    word: w,
                    score: round4(rng.uniform(0.5, 1.0)),
                });
            }
        }
        while concepts.len() < config.concepts_per_image {
            let w = content[rng.below(content.len())].clone();
            if !concepts.iter().any(|c| c.word == w) {
                concepts.push(ConceptCandidate {
                    word: w,
                    score: round4(rng.uniform(0.0, 0.5)),
                });
            }
        }

        // Piecewise-constant depth: background, then one plane per entity.
        let mut map = DepthMap::filled(width, height, rng.range(100, 255) as u8);
        for b in objects.iter().map(|o| &o.bbox).chain(ocr.iter().map(|o| &o.bbox)) {
            let v = rng.range(0, 255) as u8;
            map.fill_rect(b.x_tl as u32, b.y_tl as u32, b.x_br as u32, b.y_br as u32, v);
        }

        records.push(SceneRecord {
            id: id.clone(),
            width,
            height,
            objects,
            ocr,
            concepts,
            captions,
            depth_map: format!("depth/{id}.pgm"),
        });
        depth_maps.push(map);
    }
    for r in &records {
        r.validate()?;
    }

    let config = ModelConfig {
        seed,
        ..ModelConfig::desk()
    };
    Ok(FixtureSet {
        records,
        depth_maps,
        vocab,
        embeddings,
        config,
    })
}

/// Generates the corpus and writes it under `out_dir`.
pub fn gen_fixtures(
    seed: u64,
    n_images: usize,
    config: &FixtureConfig,
    out_dir: impl AsRef<Path>,
) -> Result<FixtureSet> {
    let set = generate_fixtures(seed, n_images, config)?;
    let out = out_dir.as_ref();
    let depth_dir = out.join("depth");
    fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
    for (r, m) in set.records.iter().zip(&set.depth_maps) {
        m.save(out.join(&r.depth_map))?;
    }
    save_scene_records(out.join("records.jsonl"), &set.records)?;
    set.vocab.save(out.join("vocab.txt"))?;
    set.embeddings.save(out.join("embeddings.txt"))?;
    let cfg_path = out.join("config.json");
    fs::write(&cfg_path, set.config.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tokenize::tokenize;

    #[test]
    fn deterministic() {
        let a = generate_fixtures(42, 3, &FixtureConfig::default()).unwrap();
        let b = generate_fixtures(42, 3, &FixtureConfig::default()).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.depth_maps, b.depth_maps);
        assert_eq!(a.embeddings, b.embeddings);
        let c = generate_fixtures(43, 3, &FixtureConfig::default()).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn captions_use_vocab_or_ocr_and_need_copy() {
        let set = generate_fixtures(7, 10, &FixtureConfig::default()).unwrap();
        for r in &set.records {
            let ocr = r.ocr_surfaces();
            for cap in &r.captions {
                let mut copied = 0;
                for tok in tokenize(cap) {
                    match set.vocab.index_of(&tok) {
                        Some(i) => assert!(i < 64),
                        None => {
                            assert!(ocr.contains(&tok), "{tok} not in OCR list");
                            copied += 1;
                        }
                    }
                }
                assert!(copied >= 1);
            }
            for o in &r.ocr {
                assert!(set.embeddings.get(&o.token).is_some());
            }
            for c in &r.concepts {
                assert!(set.embeddings.get(&c.word).is_some());
            }
        }
    }

    #[test]
    fn zero_images_rejected() {
        assert!(generate_fixtures(1, 0, &FixtureConfig::default()).is_err());
    }
}
