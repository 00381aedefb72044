use alloc::string::String;
use alloc::vec::Vec;

use super::Sentence;

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | ';')
}

/// Splits raw text into sentences.
///
/// A sentence ends after a run of `.`, `!`, `?` or `;` (the run stays with
/// the sentence) or at a newline. Fragments are trimmed and empty ones dropped.
pub fn segment_sentences(raw: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = raw.chars().peekable();

    let flush = |current: &mut String, out: &mut Vec<Sentence>| {
        let trimmed = current.trim();
        if !trimmed.is_empty() {
            out.push(Sentence {
                index: out.len(),
                text: String::from(trimmed),
            });
        }
        current.clear();
    };

    while let Some(c) = chars.next() {
        if c == '\n' {
            flush(&mut current, &mut out);
        } else if is_terminator(c) {
            current.push(c);
            while let Some(&next) = chars.peek() {
                if !is_terminator(next) {
                    break;
                }
                current.push(next);
                chars.next();
            }
            flush(&mut current, &mut out);
        } else {
            current.push(c);
        }
    }
    flush(&mut current, &mut out);
    out
}

/// Word tokenizer shared by the vocabulary, BM25 and ROUGE.
///
/// Tokens are maximal runs of alphanumeric characters, lowercased. Whitespace
/// and punctuation only act as boundaries.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(raw: &str) -> Vec<String> {
        segment_sentences(raw).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn segments_on_terminators() {
        assert_eq!(texts("Hello. World!"), ["Hello.", "World!"]);
        assert_eq!(texts("a.b"), ["a.", "b"]);
        assert_eq!(texts("A. B? C!"), ["A.", "B?", "C!"]);
        assert!(texts("").is_empty());
    }

    #[test]
    fn newline_and_semicolon_split() {
        assert_eq!(texts("one\ntwo; three"), ["one", "two;", "three"]);
        assert_eq!(texts("wait... what?!"), ["wait...", "what?!"]);
    }

    #[test]
    fn indices_are_contiguous() {
        let s = segment_sentences("x. \n\n y. z");
        let idx: Vec<usize> = s.iter().map(|s| s.index).collect();
        assert_eq!(idx, [0, 1, 2]);
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("Salt, prevents RADIATION!"), ["salt", "prevents", "radiation"]);
        assert_eq!(tokenize("don't stop"), ["don", "t", "stop"]);
        assert_eq!(tokenize("Émile\u{3000}naïve"), ["émile", "naïve"]);
        assert!(tokenize(" ,.; ").is_empty());
    }
}
