//! Whitespace + punctuation tokenization and rule-based sentence splitting.

use serde::{Deserialize, Serialize};

/// A token with its lowercased form, its original surface form and its
/// character offsets (`end` exclusive) in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub raw: String,
    pub start: usize,
    pub end: usize,
}

/// Inclusive token-index range, serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl From<[usize; 2]> for TokenSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        TokenSpan { start, end }
    }
}

impl From<TokenSpan> for [usize; 2] {
    fn from(s: TokenSpan) -> Self {
        [s.start, s.end]
    }
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;
}

/// Alphanumeric runs are words; every other non-space character is a token
/// of its own. Output is lowercased.
#[derive(Clone, Copy, Debug, Default)]
pub struct BasicTokenizer;

impl Tokenizer for BasicTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut word = String::new();
        let mut word_start = 0;
        let flush = |word: &mut String, start: usize, end: usize, out: &mut Vec<Token>| {
            if !word.is_empty() {
                out.push(Token {
                    text: word.to_lowercase(),
                    raw: std::mem::take(word),
                    start,
                    end,
                });
            }
        };
        let mut n = 0;
        for (i, ch) in text.chars().enumerate() {
            n = i + 1;
            if ch.is_alphanumeric() {
                if word.is_empty() {
                    word_start = i;
                }
                word.push(ch);
                continue;
            }
            flush(&mut word, word_start, i, &mut out);
            if !ch.is_whitespace() {
                out.push(Token {
                    text: ch.to_lowercase().collect(),
                    raw: ch.to_string(),
                    start: i,
                    end: i + 1,
                });
            }
        }
        flush(&mut word, word_start, n, &mut out);
        out
    }
}

/// Lowercased token strings of `text`.
pub fn words(text: &str) -> Vec<String> {
    BasicTokenizer.tokenize(text).into_iter().map(|t| t.text).collect()
}

pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

const SENTENCE_END: &[&str] = &[".", "!", "?"];
const CLOSERS: &[&str] = &["\"", "'", ")", "]", "\u{201d}", "\u{2019}"];
const ABBREVIATIONS: &[&str] = &["mr", "mrs", "ms", "dr", "st", "jr", "sr", "vs", "prof", "gen", "col", "lt", "sgt", "rev"];

/// Splits tokens of `text` into sentences. A sentence ends at `.`, `!` or
/// `?` (absorbing trailing closing quotes and brackets) and at line breaks.
pub fn split_sentences(text: &str, tokens: &[Token]) -> Vec<TokenSpan> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = text.chars().collect();
    let newline_between = |a: &Token, b: &Token| chars[a.end..b.start].contains(&'\n');
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < tokens.len() {
        let mut end_here = false;
        if SENTENCE_END.contains(&tokens[i].text.as_str()) {
            let abbrev = tokens[i].text == "."
                && i > 0
                && tokens[i - 1].end == tokens[i].start
                && (ABBREVIATIONS.contains(&tokens[i - 1].text.as_str())
                    || (tokens[i - 1].text.chars().count() == 1 && tokens[i - 1].raw.chars().all(char::is_uppercase)));
            if !abbrev {
                while i + 1 < tokens.len()
                    && CLOSERS.contains(&tokens[i + 1].text.as_str())
                    && !newline_between(&tokens[i], &tokens[i + 1])
                {
                    i += 1;
                }
                end_here = true;
            }
        }
        if !end_here && i + 1 < tokens.len() && newline_between(&tokens[i], &tokens[i + 1]) {
            end_here = true;
        }
        if end_here || i + 1 == tokens.len() {
            spans.push(TokenSpan::new(start, i));
            start = i + 1;
        }
        i += 1;
    }
    spans
}

/// Tokens overlapping the character range `[start, end)`.
pub fn char_range_to_tokens(tokens: &[Token], start: usize, end: usize) -> Option<TokenSpan> {
    let mut first = None;
    let mut last = None;
    for (i, t) in tokens.iter().enumerate() {
        if t.start < end && start < t.end {
            first.get_or_insert(i);
            last = Some(i);
        }
    }
    Some(TokenSpan::new(first?, last?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation_lowercased() {
        let toks = BasicTokenizer.tokenize("Bush's nomination, by Super Tuesday.");
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["bush", "'", "s", "nomination", ",", "by", "super", "tuesday", "."]);
        assert_eq!(toks[0].raw, "Bush");
        assert_eq!((toks[3].start, toks[3].end), (7, 17));
    }

    #[test]
    fn offsets_are_character_based() {
        let toks = BasicTokenizer.tokenize("café au lait");
        assert_eq!((toks[1].start, toks[1].end), (5, 7));
    }

    #[test]
    fn sentence_split_handles_quotes_abbreviations_and_newlines() {
        let text = "He said \"go.\" Mr. Smith left!\nNew line here";
        let toks = BasicTokenizer.tokenize(text);
        let sents = split_sentences(text, &toks);
        let render: Vec<String> = sents
            .iter()
            .map(|s| toks[s.start..=s.end].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "))
            .collect();
        assert_eq!(render, ["he said \" go . \"", "mr . smith left !", "new line here"]);
    }

    #[test]
    fn char_range_maps_to_overlapping_tokens() {
        let toks = BasicTokenizer.tokenize("a third term due");
        assert_eq!(char_range_to_tokens(&toks, 3, 11), Some(TokenSpan::new(1, 2)));
        assert_eq!(char_range_to_tokens(&toks, 100, 101), None);
    }
}
