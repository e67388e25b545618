//! Rule-based salient-entity extraction.
//!
//! An entity is any of:
//! 1. a numeric token (integers, decimals, thousands separators, percents,
//!    years), kept verbatim;
//! 2. a maximal run of capitalized words, after dropping leading function
//!    words; a single-word run that sits at the start of a sentence is
//!    skipped because its capital is not informative;
//! 3. a case-insensitive whole-word hit of a domain lexicon entry.
//!
//! Phrases are lower-cased and whitespace-collapsed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Words dropped from the head of a capitalized run.
const FUNCTION_WORDS: &[&str] = &[
    "a", "after", "an", "and", "as", "at", "before", "but", "by", "during", "for", "from", "he",
    "her", "here", "his", "how", "i", "if", "in", "it", "its", "no", "of", "on", "or", "she",
    "that", "the", "their", "there", "these", "they", "this", "those", "to", "we", "what", "when",
    "where", "which", "who", "why", "with", "yes", "you",
];

/// Normalized set of entities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub entities: BTreeSet<String>,
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `raw` after normalization; blank strings are ignored.
    pub fn insert(&mut self, raw: &str) {
        let n = normalize_entity(raw);
        if !n.is_empty() {
            self.entities.insert(n);
        }
    }

    pub fn contains(&self, e: &str) -> bool {
        self.entities.contains(e)
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn union(&mut self, other: &EntitySet) {
        self.entities.extend(other.entities.iter().cloned());
    }

    pub fn is_disjoint(&self, other: &EntitySet) -> bool {
        self.entities.is_disjoint(&other.entities)
    }
}

impl<S: AsRef<str>> FromIterator<S> for EntitySet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = EntitySet::new();
        for s in iter {
            set.insert(s.as_ref());
        }
        set
    }
}

/// Numbers verbatim, phrases lower-cased with single spaces. Idempotent.
pub fn normalize_entity(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if is_numeric(&collapsed) {
        collapsed
    } else {
        collapsed.to_lowercase()
    }
}

pub(crate) fn is_numeric(tok: &str) -> bool {
    let body = tok.strip_prefix('-').unwrap_or(tok);
    let body = body.strip_suffix('%').unwrap_or(body);
    if body.is_empty() {
        return false;
    }
    let bytes = body.as_bytes();
    if !bytes[0].is_ascii_digit() || !bytes[bytes.len() - 1].is_ascii_digit() {
        return false;
    }
    let mut prev_sep = false;
    for &b in bytes {
        match b {
            b'0'..=b'9' => prev_sep = false,
            b'.' | b',' if !prev_sep => prev_sep = true,
            _ => return false,
        }
    }
    true
}

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric() && c != '%' && c != '-'
}

struct Word<'a> {
    core: &'a str,
    /// Starts a sentence.
    sentence_start: bool,
    /// Preceded by punctuation such as an opening quote or bracket.
    breaks_before: bool,
    /// Followed by punctuation that ends a phrase.
    breaks_after: bool,
}

fn words(text: &str) -> Vec<Word<'_>> {
    let mut out = Vec::new();
    let mut next_starts_sentence = true;
    for raw in text.split_whitespace() {
        let start = raw.trim_start_matches(is_edge_punct);
        let core = start.trim_end_matches(is_edge_punct);
        let trailing = &start[core.len()..];
        let core = core
            .strip_suffix("'s")
            .or_else(|| core.strip_suffix("’s"))
            .unwrap_or(core);
        let ends_sentence = trailing.contains(['.', '!', '?']);
        if !core.is_empty() {
            out.push(Word {
                core,
                sentence_start: next_starts_sentence,
                breaks_before: raw.len() != start.len(),
                breaks_after: !trailing.is_empty(),
            });
        }
        next_starts_sentence = ends_sentence || (core.is_empty() && next_starts_sentence);
    }
    out
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

fn flush_span(span: &mut Vec<&Word<'_>>, out: &mut EntitySet) {
    let mut start = 0;
    while start < span.len() && FUNCTION_WORDS.contains(&span[start].core.to_lowercase().as_str()) {
        start += 1;
    }
    let rest = &span[start..];
    let skip = match rest {
        [] => true,
        [only] => only.sentence_start,
        _ => false,
    };
    if !skip {
        let phrase = rest.iter().map(|w| w.core).collect::<Vec<_>>().join(" ");
        out.insert(&phrase);
    }
    span.clear();
}

/// Token-level lexicon matching on lower-cased word cores.
fn lexicon_hits(text: &str, lexicon: &BTreeSet<String>, out: &mut EntitySet) {
    let toks: Vec<String> = words(text).iter().map(|w| w.core.to_lowercase()).collect();
    for entry in lexicon {
        let needle: Vec<String> = entry.split_whitespace().map(str::to_lowercase).collect();
        if needle.is_empty() || needle.len() > toks.len() {
            continue;
        }
        if toks.windows(needle.len()).any(|w| w == needle.as_slice()) {
            out.insert(entry);
        }
    }
}

/// Extracts numbers, capitalized phrases and lexicon terms from `text`.
pub fn extract_entities(text: &str, lexicon: Option<&BTreeSet<String>>) -> EntitySet {
    let mut out = EntitySet::new();
    let ws = words(text);
    let mut span: Vec<&Word<'_>> = Vec::new();
    for w in &ws {
        if is_numeric(w.core) {
            flush_span(&mut span, &mut out);
            out.insert(w.core);
            continue;
        }
        if is_capitalized(w.core) {
            if w.sentence_start || w.breaks_before {
                flush_span(&mut span, &mut out);
            }
            span.push(w);
            if w.breaks_after {
                flush_span(&mut span, &mut out);
            }
        } else {
            flush_span(&mut span, &mut out);
        }
    }
    flush_span(&mut span, &mut out);
    if let Some(lex) = lexicon {
        lexicon_hits(text, lex, &mut out);
    }
    out
}

/// Entities of every reference in the acceptable set, merged.
pub fn reference_entities<S: AsRef<str>>(
    references: &[S],
    lexicon: Option<&BTreeSet<String>>,
) -> EntitySet {
    let mut all = EntitySet::new();
    for r in references {
        all.union(&extract_entities(r.as_ref(), lexicon));
    }
    all
}
