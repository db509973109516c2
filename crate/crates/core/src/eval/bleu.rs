//! Corpus-level BLEU-4.

use std::collections::BTreeMap;

use super::corpus::{ngram_counts, Corpus};
use crate::error::{Error, Result};

pub const BLEU_MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BleuOptions {
    /// Add one to the matched and total counts of every order above 1.
    pub smoothing: bool,
}

/// Reference length closest to `cand_len`; ties go to the shorter one.
pub fn closest_ref_len(cand_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(cand_len), r))
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuBreakdown {
    /// Clipped matches and candidate totals for n = 1..=4.
    pub matches: [usize; BLEU_MAX_N],
    pub totals: [usize; BLEU_MAX_N],
    pub cand_len: usize,
    pub ref_len: usize,
    pub brevity_penalty: f64,
    pub score: f64,
}

pub fn bleu4_breakdown(corpus: &Corpus, opts: BleuOptions) -> Result<BleuBreakdown> {
    if corpus.is_empty() {
        return Err(Error::Argument("BLEU needs a non-empty corpus".into()));
    }
    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for e in corpus.entries.values() {
        cand_len += e.candidate.len();
        ref_len += closest_ref_len(e.candidate.len(), &e.references);
        for n in 1..=BLEU_MAX_N {
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &e.references {
                for (g, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (g, c) in ngram_counts(&e.candidate, n) {
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..BLEU_MAX_N {
        let (mut m, mut t) = (matches[n] as f64, totals[n] as f64);
        if opts.smoothing && n > 0 {
            m += 1.0;
            t += 1.0;
        }
        if m == 0.0 || t == 0.0 {
            zero = true;
            break;
        }
        log_sum += (m / t).ln() / BLEU_MAX_N as f64;
    }
    let score = if zero { 0.0 } else { brevity_penalty * log_sum.exp() };
    Ok(BleuBreakdown {
        matches,
        totals,
        cand_len,
        ref_len,
        brevity_penalty,
        score,
    })
}

/// Geometric mean of clipped 1- to 4-gram precisions times the brevity
/// penalty, pooled over the corpus. Unsmoothed, any empty order gives 0.
pub fn bleu4(corpus: &Corpus) -> Result<f64> {
    Ok(bleu4_breakdown(corpus, BleuOptions::default())?.score)
}
