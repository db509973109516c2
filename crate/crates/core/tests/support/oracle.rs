//! Brute-force reference implementations used only by tests.
#![allow(dead_code)]

use std::collections::HashMap;

use device_core::ingest::{BoundingBox, DepthMap};
use device_core::numerics::SplitMix64;

pub type Entry = (Vec<String>, Vec<Vec<String>>);

fn windows(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for start in 0..=tokens.len() - n {
            *out.entry(tokens[start..start + n].to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU-4, unsmoothed, closest reference length (shorter on ties).
pub fn bleu4(entries: &[Entry]) -> f64 {
    let mut hits = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refs) in entries {
        c += cand.len();
        let mut best: Option<usize> = None;
        for reference in refs {
            let l = reference.len();
            best = Some(match best {
                None => l,
                Some(b) => {
                    let (db, dl) = (b.abs_diff(cand.len()), l.abs_diff(cand.len()));
                    if dl < db || (dl == db && l < b) {
                        l
                    } else {
                        b
                    }
                }
            });
        }
        r += best.unwrap();
        for n in 1..=4 {
            for (gram, count) in windows(cand, n) {
                let cap = refs
                    .iter()
                    .map(|x| windows(x, n).get(&gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                hits[n - 1] += count.min(cap);
                total[n - 1] += count;
            }
        }
    }
    if c == 0 || hits.iter().any(|&h| h == 0) {
        return 0.0;
    }
    let mean_log: f64 = (0..4).map(|i| (hits[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * mean_log.exp()
}

/// CIDEr-D with one document per entry (all references pooled), sigma 6,
/// clipped tf-idf products and scale 10.
pub fn cider_d(entries: &[Entry]) -> f64 {
    let docs = entries.len() as f64;
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for (_, refs) in entries {
        let mut seen: Vec<Vec<String>> = Vec::new();
        for reference in refs {
            for n in 1..=4 {
                for gram in windows(reference, n).into_keys() {
                    if !seen.contains(&gram) {
                        seen.push(gram);
                    }
                }
            }
        }
        for gram in seen {
            *df.entry(gram).or_insert(0.0) += 1.0;
        }
    }
    let tfidf = |tokens: &[String], n: usize| -> HashMap<Vec<String>, f64> {
        windows(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                (g, tf as f64 * (docs.ln() - d.ln()))
            })
            .collect()
    };
    let norm = |v: &HashMap<Vec<String>, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let mut sum = 0.0;
    for (cand, refs) in entries {
        let mut per_n = [0.0; 4];
        for n in 1..=4 {
            let vc = tfidf(cand, n);
            for reference in refs {
                let vr = tfidf(reference, n);
                let mut dot = 0.0;
                for (g, &a) in &vc {
                    if let Some(&b) = vr.get(g) {
                        dot += a.min(b) * b;
                    }
                }
                let denom = norm(&vc) * norm(&vr);
                let cos = if denom == 0.0 { 0.0 } else { dot / denom };
                let delta = cand.len() as f64 - reference.len() as f64;
                per_n[n - 1] += cos * (-delta * delta / 72.0).exp() / refs.len() as f64;
            }
        }
        sum += per_n.iter().sum::<f64>() / 4.0 * 10.0;
    }
    sum / docs
}

/// Mode of the pixels whose unit cells overlap the box with positive area;
/// ties go to the smaller gray value.
pub fn modal_depth(map: &DepthMap, b: &BoundingBox) -> u8 {
    let mut counts: HashMap<u8, usize> = HashMap::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let (fx, fy) = (x as f64, y as f64);
            if fx + 1.0 > b.x_tl && fx < b.x_br && fy + 1.0 > b.y_tl && fy < b.y_br {
                *counts.entry(map.get(x, y)).or_insert(0) += 1;
            }
        }
    }
    let mut pairs: Vec<(u8, usize)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs[0].0
}

/// A random map with a few uniform patches over a noisy background, so
/// boxes see both clear winners and ties.
pub fn random_depth_map(rng: &mut SplitMix64) -> DepthMap {
    let (w, h) = (rng.range(1, 24) as u32, rng.range(1, 24) as u32);
    let palette: Vec<u8> = (0..rng.range(1, 5)).map(|_| rng.below(256) as u8).collect();
    let values = (0..w * h).map(|_| palette[rng.below(palette.len())]).collect();
    let mut map = DepthMap::new(w, h, values).unwrap();
    for _ in 0..rng.below(3) {
        let (x0, y0) = (rng.below(w as usize) as u32, rng.below(h as usize) as u32);
        let (x1, y1) = (
            rng.range(x0 as usize + 1, w as usize) as u32,
            rng.range(y0 as usize + 1, h as usize) as u32,
        );
        map.fill_rect(x0, y0, x1, y1, rng.below(256) as u8);
    }
    map
}

/// A box inside `w x h` with positive area; half the time on integer
/// coordinates.
pub fn random_box(rng: &mut SplitMix64, w: u32, h: u32) -> BoundingBox {
    let axis = |rng: &mut SplitMix64, size: u32| {
        let size = size as f64;
        if rng.next_f64() < 0.5 {
            let a = rng.below(size as usize) as f64;
            let b = rng.range(a as usize + 1, size as usize) as f64;
            (a, b)
        } else {
            let a = rng.uniform(0.0, size - 0.01);
            let b = rng.uniform(a + 0.005, size);
            (a, b)
        }
    };
    let (x0, x1) = axis(rng, w);
    let (y0, y1) = axis(rng, h);
    BoundingBox::new(x0, y0, x1, y1)
}

/// A small corpus over a tiny vocabulary so higher-order n-grams collide.
pub fn random_corpus(rng: &mut SplitMix64) -> Vec<Entry> {
    let words = ["a", "b", "c", "d", "e", "f"];
    let vocab = rng.range(2, words.len());
    let sentence = |rng: &mut SplitMix64| -> Vec<String> {
        (0..rng.range(1, 9))
            .map(|_| words[rng.below(vocab)].to_string())
            .collect()
    };
    (0..rng.range(2, 6))
        .map(|_| {
            let refs: Vec<Vec<String>> = (0..rng.range(1, 4)).map(|_| sentence(rng)).collect();
            let cand = if rng.next_f64() < 0.3 {
                refs[0].clone()
            } else {
                sentence(rng)
            };
            (cand, refs)
        })
        .collect()
}

pub fn to_corpus(entries: &[Entry]) -> device_core::eval::Corpus {
    let mut corpus = device_core::eval::Corpus::default();
    for (i, (cand, refs)) in entries.iter().enumerate() {
        corpus.insert(format!("r{i:02}"), cand.clone(), refs.clone()).unwrap();
    }
    corpus
}
