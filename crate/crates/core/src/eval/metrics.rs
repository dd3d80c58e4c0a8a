use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};

/// Lowercases, splits ASCII punctuation into standalone tokens, then splits on
/// whitespace. Every metric consumes tokens produced here.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_punctuation() {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn counts<'a>(tokens: &'a [String]) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Clipped unigram precision times the brevity penalty. `None` for an empty
/// reference.
pub fn bleu1(candidate: &[String], reference: &[String]) -> Option<f64> {
    if reference.is_empty() {
        return None;
    }
    if candidate.is_empty() {
        return Some(0.0);
    }
    let refc = counts(reference);
    let clipped: usize = counts(candidate)
        .into_iter()
        .map(|(t, c)| c.min(refc.get(t).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / candidate.len() as f64;
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64).min(0.0).exp();
    Some(precision * bp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeL {
    if candidate.is_empty() || reference.is_empty() {
        return RougeL { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let l = lcs_len(candidate, reference) as f64;
    let precision = l / candidate.len() as f64;
    let recall = l / reference.len() as f64;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    RougeL { precision, recall, f1 }
}

/// Alignment statistics behind [`meteor_basic`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// (candidate index, reference index), sorted by candidate index.
    pub pairs: Vec<(usize, usize)>,
    pub chunks: usize,
}

/// Exact matches first, then stem matches, each greedy left to right over
/// the candidate taking the first free reference position.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let stemmer = Stemmer::create(Algorithm::English);
    let stems = |ts: &[String]| -> Vec<String> { ts.iter().map(|t| stemmer.stem(t).into_owned()).collect() };
    let (cs, rs) = (stems(candidate), stems(reference));
    let mut ref_used = vec![false; reference.len()];
    let mut cand_match: Vec<Option<usize>> = vec![None; candidate.len()];

    for stage in 0..2 {
        for (i, slot) in cand_match.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            let hit = (0..reference.len()).find(|&j| {
                !ref_used[j] && if stage == 0 { candidate[i] == reference[j] } else { cs[i] == rs[j] }
            });
            if let Some(j) = hit {
                ref_used[j] = true;
                *slot = Some(j);
            }
        }
    }

    let pairs: Vec<(usize, usize)> = cand_match.iter().enumerate().filter_map(|(i, m)| m.map(|j| (i, j))).collect();
    let mut chunks = 0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let continues = k > 0 && {
            let (pi, pj) = pairs[k - 1];
            pi + 1 == i && pj + 1 == j
        };
        if !continues {
            chunks += 1;
        }
    }
    Alignment { pairs, chunks }
}

/// METEOR without the synonym stage:
/// `F = 10PR / (R + 9P)`, `penalty = 0.5 (chunks / matches)^3`,
/// `score = F (1 - penalty)`.
pub fn meteor_basic(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(candidate, reference);
    let m = a.pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}
