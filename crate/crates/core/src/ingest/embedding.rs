//! Pre-baked 300-dimensional subword vectors in `word v1 ... v300` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SUBWORD_DIM: usize = 300;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != SUBWORD_DIM {
            return Err(Error::Argument(format!(
                "vector for {word:?} has {} values, expected {SUBWORD_DIM}",
                vector.len()
            )));
        }
        self.vectors.insert(word.to_lowercase(), vector);
        Ok(())
    }

    /// Case-folded lookup.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vector for `token`; multi-word tokens average their words. Missing
    /// words are an error unless `allow_oov`, which substitutes zeros.
    pub fn subword_vector(&self, token: &str, allow_oov: bool) -> Result<Vec<f64>> {
        let words: Vec<&str> = token.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Oov { token: token.into() });
        }
        let mut acc = vec![0.0; SUBWORD_DIM];
        for w in &words {
            match self.get(w) {
                Some(v) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
                None if allow_oov => log::warn!("{w:?} missing from embedding table; using zeros"),
                None => return Err(Error::Oov { token: (*w).into() }),
            }
        }
        let n = words.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.vectors {
            out.push_str(w);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_embedding_table(text: &str, origin: &str) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let mut parts = line.split_whitespace();
        let word = parts.next().ok_or_else(|| err("blank line".into()))?;
        let values = parts
            .map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err(format!("non-numeric or non-finite value for {word:?}")))?;
        if values.len() != SUBWORD_DIM {
            return Err(err(format!(
                "{word:?} has {} values, expected {SUBWORD_DIM}",
                values.len()
            )));
        }
        if table.get(word).is_some() {
            log::warn!("{origin}:{}: duplicate word {word:?}, last definition wins", i + 1);
        }
        table.insert(word, values)?;
    }
    Ok(table)
}

pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_table(&text, &path.display().to_string())
}
