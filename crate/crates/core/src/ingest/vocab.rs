use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Fixed caption vocabulary; indices 0..4 are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from content words; the reserved tokens are prepended.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let all: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.iter().map(|w| w.as_ref().to_string()))
            .collect();
        Self::from_full_list(all, "<memory>")
    }

    fn from_full_list(words: Vec<String>, origin: &str) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            if i < RESERVED.len() && w != RESERVED[i] {
                return Err(err(format!(
                    "expected reserved token {} here, found {w:?}",
                    RESERVED[i]
                )));
            }
            if i >= RESERVED.len() && RESERVED.contains(&w.as_str()) {
                return Err(err(format!("reserved token {w} outside the header")));
            }
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(err(format!("invalid word {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(err(format!("duplicate word {w:?}")));
            }
        }
        if words.len() <= RESERVED.len() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: words.len(),
                msg: "vocabulary has no content words".into(),
            });
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Content words, excluding the reserved header.
    pub fn content_words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }

    pub fn to_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// One word per line; the first four lines must be the reserved tokens.
pub fn parse_vocabulary(text: &str, origin: &str) -> Result<Vocabulary> {
    Vocabulary::from_full_list(text.lines().map(str::to_string).collect(), origin)
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vocabulary(&text, &path.display().to_string())
}
