//! Sentence segmentation for per-sentence hallucination rates.

/// Lower-cased abbreviations (without the final period) that do not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "e.g", "i.e", "approx", "fig",
    "inc", "ltd", "co", "corp", "dept", "u.s", "u.k", "a.m", "p.m", "jan", "feb", "aug", "sept",
    "oct", "nov", "dec",
];

fn is_abbreviation(word: &str) -> bool {
    let w = word
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    ABBREVIATIONS.contains(&w.as_str())
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text. Decimal
/// points and the abbreviations above never split. Segments are trimmed and
/// empty ones dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut seg_start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i;
            while j + 1 < chars.len()
                && matches!(
                    chars[j + 1].1,
                    '.' | '!' | '?' | '"' | '\'' | ')' | '’' | '”'
                )
            {
                j += 1;
            }
            let at_boundary = j + 1 == chars.len() || chars[j + 1].1.is_whitespace();
            let protected = c == '.' && j == i && {
                let (pos, _) = chars[i];
                let word_start = text[..pos].rfind(char::is_whitespace).map_or(0, |w| w + 1);
                is_abbreviation(&text[word_start..pos])
            };
            if at_boundary && !protected {
                let end = chars.get(j + 1).map_or(text.len(), |&(p, _)| p);
                push_segment(&mut out, &text[seg_start..end]);
                seg_start = end;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    push_segment(&mut out, &text[seg_start..]);
    out
}

fn push_segment(out: &mut Vec<String>, seg: &str) {
    let seg = seg.trim();
    if !seg.is_empty() {
        out.push(seg.to_string());
    }
}
