//! Candidate/reference corpora and their JSON Lines readers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::tokenize::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Tokenized candidates and references keyed by record id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub entries: BTreeMap<String, CorpusEntry>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds an already tokenized entry; at least one reference is required.
    pub fn insert(
        &mut self,
        id: impl Into<String>,
        candidate: Vec<String>,
        references: Vec<Vec<String>>,
    ) -> Result<()> {
        let id = id.into();
        if references.is_empty() {
            return Err(Error::Validation {
                record: id,
                field: "captions".into(),
                msg: "no reference captions".into(),
            });
        }
        if self.entries.contains_key(&id) {
            return Err(Error::Validation {
                record: id,
                field: "id".into(),
                msg: "duplicate id".into(),
            });
        }
        self.entries.insert(id, CorpusEntry { candidate, references });
        Ok(())
    }

    /// Pairs raw caption strings by id; both sides must cover the same ids.
    pub fn from_captions(
        predictions: &BTreeMap<String, String>,
        references: &BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        if let Some(id) = predictions.keys().find(|k| !references.contains_key(*k)) {
            return Err(Error::Validation {
                record: id.clone(),
                field: "id".into(),
                msg: "prediction has no references".into(),
            });
        }
        if let Some(id) = references.keys().find(|k| !predictions.contains_key(*k)) {
            return Err(Error::Validation {
                record: id.clone(),
                field: "id".into(),
                msg: "no prediction for this id".into(),
            });
        }
        let mut corpus = Corpus::default();
        for (id, cand) in predictions {
            let refs = references[id].iter().map(|r| tokenize(r)).collect();
            corpus.insert(id.clone(), tokenize(cand), refs)?;
        }
        Ok(corpus)
    }
}

#[derive(Debug, Deserialize)]
struct CaptionLine {
    id: String,
    caption: Option<String>,
    captions: Option<Vec<String>>,
}

/// Reads `{id, caption}` or `{id, captions: [...]}` lines. Other fields are
/// ignored, so scene record files can serve as references.
pub fn parse_caption_lines(text: &str, origin: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CaptionLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let caps = match (parsed.caption, parsed.captions) {
            (Some(c), None) => vec![c],
            (None, Some(cs)) if !cs.is_empty() => cs,
            (None, Some(_)) => return Err(err("empty captions list".into())),
            (Some(_), Some(_)) => return Err(err("both caption and captions given".into())),
            (None, None) => return Err(err("missing caption or captions".into())),
        };
        if out.insert(parsed.id.clone(), caps).is_some() {
            return Err(err(format!("duplicate id {:?}", parsed.id)));
        }
    }
    Ok(out)
}

pub fn load_caption_lines(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_caption_lines(&text, &path.display().to_string())
}

/// Predictions must carry exactly one caption per id.
pub fn single_captions(lines: BTreeMap<String, Vec<String>>, origin: &str) -> Result<BTreeMap<String, String>> {
    lines
        .into_iter()
        .map(|(id, mut caps)| {
            if caps.len() != 1 {
                return Err(Error::Format {
                    path: origin.to_string(),
                    msg: format!("prediction {id:?} has {} captions, expected 1", caps.len()),
                });
            }
            Ok((id, caps.pop().expect("one caption")))
        })
        .collect()
}

/// All n-grams of `tokens` with their counts.
pub fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}
