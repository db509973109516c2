//! Pyramidal histogram of characters.
//!
//! Layout (604 bits): unigram levels 2, 3, 4, 5 over the 36 symbols `a-z0-9`
//! (504 bits, level-major then region-major), followed by level 2 over
//! [`PHOC_BIGRAMS`] (100 bits, region-major).
//!
//! Character `k` of an `n`-character token spans `[k/n, (k+1)/n)`; a bigram
//! starting at `k` spans `[k/n, (k+2)/n)`. A bit is set when the overlap with
//! a region is at least half of the span. Overlaps are computed in integer
//! units of `1/(n*level)` so the half-way case is exact.

use crate::error::{Error, Result};

pub const PHOC_DIM: usize = 604;
pub const UNIGRAM_LEVELS: [usize; 4] = [2, 3, 4, 5];
pub const BIGRAM_LEVEL: usize = 2;
pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// The 50 most frequent English bigrams, in bit order.
pub const PHOC_BIGRAMS: [&str; 50] = [
    "th", "he", "in", "er", "an", "re", "es", "on", "st", "nt", "en", "at", "ed", "nd", "to", "or", "ea", "ti", "ar",
    "te", "ng", "al", "it", "as", "is", "ha", "et", "se", "ou", "of", "le", "sa", "ve", "ro", "ra", "ri", "hi", "ne",
    "me", "de", "co", "ta", "ec", "si", "ll", "so", "na", "li", "la", "el",
];

const UNIGRAM_BITS: usize = 36 * (2 + 3 + 4 + 5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhocVector(Vec<u8>);

impl PhocVector {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

fn symbol_index(c: char) -> Option<usize> {
    ALPHABET.find(c)
}

/// Offset of the first bit of `(level, region)` in the unigram block.
pub fn unigram_offset(level: usize, region: usize) -> usize {
    let before: usize = UNIGRAM_LEVELS.iter().take_while(|&&l| l < level).sum();
    (before + region) * ALPHABET.len()
}

/// Whether a span `[start, start + len)` of an `n`-symbol token covers at
/// least half of itself inside `region` of `level`.
fn covers(start: usize, len: usize, n: usize, level: usize, region: usize) -> bool {
    let (a0, a1) = (start * level, (start + len) * level);
    let (b0, b1) = (region * n, (region + 1) * n);
    let overlap = a1.min(b1).saturating_sub(a0.max(b0));
    2 * overlap >= a1 - a0
}

pub fn phoc(token: &str) -> Result<PhocVector> {
    let symbols: Vec<char> = token
        .to_lowercase()
        .chars()
        .filter(|c| symbol_index(*c).is_some())
        .collect();
    let n = symbols.len();
    if n == 0 {
        return Err(Error::Unrepresentable(token.to_string()));
    }
    let mut bits = vec![0u8; PHOC_DIM];
    for (k, &c) in symbols.iter().enumerate() {
        let sym = symbol_index(c).expect("filtered");
        for &level in &UNIGRAM_LEVELS {
            for region in 0..level {
                if covers(k, 1, n, level, region) {
                    bits[unigram_offset(level, region) + sym] = 1;
                }
            }
        }
    }
    for k in 0..n.saturating_sub(1) {
        let pair: String = symbols[k..k + 2].iter().collect();
        let Some(b) = PHOC_BIGRAMS.iter().position(|&g| g == pair) else {
            continue;
        };
        for region in 0..BIGRAM_LEVEL {
            if covers(k, 2, n, BIGRAM_LEVEL, region) {
                bits[UNIGRAM_BITS + region * PHOC_BIGRAMS.len() + b] = 1;
            }
        }
    }
    Ok(PhocVector(bits))
}
