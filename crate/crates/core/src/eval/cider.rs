//! CIDEr-D: tf-idf weighted n-gram cosine with clipping and a Gaussian
//! length penalty, averaged over orders 1..=4 and over references, times 10.

use std::collections::{BTreeMap, BTreeSet};

use super::corpus::{ngram_counts, Corpus};
use crate::error::{Error, Result};

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

/// What counts as a document for document frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdfSource {
    /// One document per record (all of its references pooled).
    #[default]
    Images,
    /// One document per reference caption; lets a single record be scored
    /// when it has several references.
    References,
}

type Vector<'a> = [BTreeMap<&'a [String], f64>; CIDER_MAX_N];

struct Weighted<'a> {
    vec: Vector<'a>,
    norm: [f64; CIDER_MAX_N],
    len: usize,
}

fn weigh<'a>(tokens: &'a [String], df: &BTreeMap<&'a [String], usize>, log_docs: f64) -> Weighted<'a> {
    let mut vec: Vector<'a> = Default::default();
    let mut norm = [0.0; CIDER_MAX_N];
    for n in 1..=CIDER_MAX_N {
        for (g, tf) in ngram_counts(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_docs - d.ln());
            norm[n - 1] += w * w;
            vec[n - 1].insert(g, w);
        }
    }
    Weighted {
        vec,
        norm: norm.map(f64::sqrt),
        len: tokens.len(),
    }
}

fn grams_of(tokens: &[String]) -> impl Iterator<Item = &[String]> {
    (1..=CIDER_MAX_N).flat_map(move |n| ngram_counts(tokens, n).into_keys())
}

fn similarity(hyp: &Weighted, reference: &Weighted) -> [f64; CIDER_MAX_N] {
    let delta = hyp.len as f64 - reference.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; CIDER_MAX_N];
    for n in 0..CIDER_MAX_N {
        let mut v = 0.0;
        for (g, &h) in &hyp.vec[n] {
            if let Some(&r) = reference.vec[n].get(g) {
                v += h.min(r) * r;
            }
        }
        if hyp.norm[n] != 0.0 && reference.norm[n] != 0.0 {
            v /= hyp.norm[n] * reference.norm[n];
        }
        out[n] = v * penalty;
    }
    out
}

/// Per-record scores, keyed like the corpus.
pub fn cider_d_per_record(corpus: &Corpus, idf: IdfSource) -> Result<BTreeMap<String, f64>> {
    if corpus.is_empty() {
        return Err(Error::Argument("CIDEr-D needs a non-empty corpus".into()));
    }
    let mut documents: Vec<BTreeSet<&[String]>> = Vec::new();
    for e in corpus.entries.values() {
        match idf {
            IdfSource::Images => documents.push(e.references.iter().flat_map(|r| grams_of(r)).collect()),
            IdfSource::References => documents.extend(e.references.iter().map(|r| grams_of(r).collect())),
        }
    }
    let docs = documents.len();
    let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
    for g in documents.into_iter().flatten() {
        *df.entry(g).or_insert(0) += 1;
    }
    if docs < 2 {
        return Err(Error::Argument(format!(
            "CIDEr-D document frequencies need at least 2 documents, got {docs}"
        )));
    }
    let log_docs = (docs as f64).ln();
    let mut out = BTreeMap::new();
    for (id, e) in &corpus.entries {
        let hyp = weigh(&e.candidate, &df, log_docs);
        let mut total = 0.0;
        for r in &e.references {
            let reference = weigh(r, &df, log_docs);
            total += similarity(&hyp, &reference).iter().sum::<f64>() / CIDER_MAX_N as f64;
        }
        out.insert(id.clone(), CIDER_SCALE * total / e.references.len() as f64);
    }
    Ok(out)
}

/// Corpus CIDEr-D: the mean of per-record scores.
pub fn cider_d(corpus: &Corpus) -> Result<f64> {
    cider_d_with(corpus, IdfSource::Images)
}

pub fn cider_d_with(corpus: &Corpus, idf: IdfSource) -> Result<f64> {
    let per = cider_d_per_record(corpus, idf)?;
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(pairs: &[(&str, &[&str])]) -> Corpus {
        let mut c = Corpus::default();
        for (i, (cand, refs)) in pairs.iter().enumerate() {
            c.insert(i.to_string(), toks(cand), refs.iter().map(|r| toks(r)).collect())
                .unwrap();
        }
        c
    }

    #[test]
    fn identity_on_disjoint_pair_is_ten() {
        let c = corpus(&[
            ("a red sign says open", &["a red sign says open"]),
            ("two cans of cold soda", &["two cans of cold soda"]),
        ]);
        assert!((cider_d(&c).unwrap() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn no_shared_ngrams_is_zero() {
        let c = corpus(&[("x y z w", &["a b c d"]), ("p q r s", &["e f g h"])]);
        assert_eq!(cider_d(&c).unwrap(), 0.0);
    }

    #[test]
    fn reference_order_irrelevant() {
        let a = corpus(&[
            ("a b c d e", &["a b c x e", "a b y d e f"]),
            ("k l m n", &["k l m", "q l m n"]),
        ]);
        let b = corpus(&[
            ("a b c d e", &["a b y d e f", "a b c x e"]),
            ("k l m n", &["q l m n", "k l m"]),
        ]);
        assert_eq!(cider_d(&a).unwrap(), cider_d(&b).unwrap());
    }

    #[test]
    fn single_record_needs_reference_documents() {
        let c = corpus(&[("a b c d", &["a b c d", "a b e f"])]);
        assert!(cider_d(&c).is_err());
        assert!(cider_d_with(&c, IdfSource::References).unwrap() > 0.0);
        assert!(cider_d(&Corpus::default()).is_err());
    }

    #[test]
    fn length_penalty_uses_token_counts() {
        let c = corpus(&[("a b c d", &["a b c d"]), ("e f g h", &["e f g h"])]);
        let base = cider_d_per_record(&c, IdfSource::Images).unwrap()["0"];
        let longer = corpus(&[("a b c d", &["a b c d z z z z z z"]), ("e f g h", &["e f g h"])]);
        let s = cider_d_per_record(&longer, IdfSource::Images).unwrap()["0"];
        assert!(s < base);
    }
}
