//! Lexical quality metrics over lower-cased whitespace tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrecisionRecall {
    const ZERO: PrecisionRecall = PrecisionRecall {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_counts(common: usize, cand: usize, refr: usize) -> Self {
        if common == 0 || cand == 0 || refr == 0 {
            return Self::ZERO;
        }
        let precision = common as f64 / cand as f64;
        let recall = common as f64 / refr as f64;
        Self {
            precision,
            recall,
            f1: 2.0 * precision * recall / (precision + recall),
        }
    }
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L: LCS-based precision, recall and F1.
pub fn rouge_l(candidate: &str, reference: &str) -> PrecisionRecall {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    PrecisionRecall::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

/// METEOR restricted to exact unigram matches:
/// `F_mean · (1 − 0.5 · (chunks / matches)³)` with `F_mean = 10PR / (R + 9P)`.
pub fn meteor_lite(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, tok) in r.iter().enumerate() {
        positions.entry(tok).or_default().push(j);
    }
    let mut used = vec![false; r.len()];
    let mut last: Option<usize> = None;
    let mut matches = 0usize;
    let mut chunks = 0usize;
    for tok in &c {
        let Some(cands) = positions.get(tok.as_str()) else {
            last = None;
            continue;
        };
        let continuing = last
            .map(|l| l + 1)
            .filter(|j| cands.contains(j) && !used[*j]);
        let chosen = continuing.or_else(|| cands.iter().copied().find(|&j| !used[j]));
        match chosen {
            Some(j) => {
                used[j] = true;
                matches += 1;
                if continuing.is_none() {
                    chunks += 1;
                }
                last = Some(j);
            }
            None => last = None,
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / c.len() as f64;
    let rc = matches as f64 / r.len() as f64;
    let fmean = 10.0 * p * rc / (rc + 9.0 * p);
    let frag = chunks as f64 / matches as f64;
    fmean * (1.0 - 0.5 * frag.powi(3))
}

fn bag_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Bag-of-words token F1 with edge punctuation stripped. This is the lexical
/// stand-in for an embedding similarity when no scorer channel is recorded.
pub fn token_f1(candidate: &str, reference: &str) -> f64 {
    let c = bag_tokens(candidate);
    let r = bag_tokens(reference);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &c {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    PrecisionRecall::from_counts(common, c.len(), r.len()).f1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_examples() {
        let same = rouge_l("The cat sat", "the cat sat");
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        assert_eq!(rouge_l("dogs bark", "the cat sat"), PrecisionRecall::ZERO);
        let r = rouge_l("the cat sat", "the cat sat on the mat");
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l("", ""), PrecisionRecall::ZERO);
    }

    #[test]
    fn lcs_small_cases() {
        assert_eq!(lcs_len(b"ABCBDAB", b"BDCABA"), 4);
        assert_eq!(lcs_len::<u8>(&[], b"abc"), 0);
    }

    #[test]
    fn meteor_examples() {
        assert!((meteor_lite("a", "a") - 0.5).abs() < 1e-12);
        assert_eq!(meteor_lite("x y", "a b"), 0.0);
        let m = meteor_lite("a b c", "a b c");
        assert!((m - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        assert!((m - 0.98148).abs() < 1e-5);
    }

    #[test]
    fn meteor_counts_chunks() {
        // matches a, b, c as two chunks ("a b" and "c")
        let m = meteor_lite("a b c", "a b x c");
        let p = 1.0;
        let r = 0.75;
        let fmean = 10.0 * p * r / (r + 9.0 * p);
        let expected = fmean * (1.0 - 0.5 * (2.0f64 / 3.0).powi(3));
        assert!((m - expected).abs() < 1e-12);
    }

    #[test]
    fn token_f1_ignores_punctuation() {
        assert_eq!(token_f1("Blue.", "blue"), 1.0);
        assert_eq!(token_f1("", "blue"), 0.0);
    }
}
