//! Caption metrics and the tokenization they share with training.

pub mod bleu;
pub mod cider;
pub mod corpus;
pub mod tokenize;

pub use bleu::{bleu4, bleu4_breakdown, BleuOptions};
pub use cider::{cider_d, cider_d_with, IdfSource};
pub use corpus::{load_caption_lines, parse_caption_lines, single_captions, Corpus, CorpusEntry};
pub use tokenize::{normalize_token, tokenize};
