//! Extractive answer span location by maximum token-level F1.
//!
//! F1 is computed over content tokens only (tokens with at least one
//! alphanumeric character), with clipped multiset overlap. Among spans with
//! the best F1 the shortest wins, then the earliest.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::tokenize::{is_punctuation, words, TokenSpan};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanMatch {
    pub span: TokenSpan,
    pub f1: f64,
    /// No span in the passage shares a content token with the answer.
    pub weak: bool,
}

/// Finds the passage span with maximum F1 against `answer_text`. The search
/// is restricted to `window` first and widened to the whole passage only if
/// nothing inside the window overlaps the answer.
pub fn locate_answer_span(passage: &[String], answer_text: &str, window: Option<TokenSpan>) -> SpanMatch {
    locate_answer_tokens(passage, &words(answer_text), window)
}

pub fn locate_answer_tokens(passage: &[String], answer: &[String], window: Option<TokenSpan>) -> SpanMatch {
    assert!(!passage.is_empty(), "passage must be non-empty");
    let fallback = window.unwrap_or(TokenSpan::new(0, 0));
    let index = AnswerIndex::new(answer);
    let found = window
        .and_then(|w| index.best_in(passage, w.start, w.end.min(passage.len() - 1)))
        .or_else(|| index.best_in(passage, 0, passage.len() - 1));
    match found {
        Some(c) => SpanMatch {
            span: TokenSpan::new(c.start, c.end),
            f1: c.f1(index.len),
            weak: false,
        },
        None => SpanMatch {
            span: fallback,
            f1: 0.0,
            weak: true,
        },
    }
}

struct AnswerIndex<'a> {
    slot: HashMap<&'a str, usize>,
    need: Vec<usize>,
    len: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    overlap: usize,
    content: usize,
    start: usize,
    end: usize,
}

impl Candidate {
    fn f1(&self, answer_len: usize) -> f64 {
        2.0 * self.overlap as f64 / (self.content + answer_len) as f64
    }

    fn raw_len(&self) -> usize {
        self.end - self.start + 1
    }

    /// Exact comparison of F1 = 2·ov / (content + answer_len) by cross
    /// multiplication, then the shorter/earlier tie-breaks.
    fn better_than(&self, other: &Candidate, answer_len: usize) -> bool {
        let lhs = self.overlap * (other.content + answer_len);
        let rhs = other.overlap * (self.content + answer_len);
        match lhs.cmp(&rhs) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.raw_len(), self.start) < (other.raw_len(), other.start),
        }
    }
}

impl<'a> AnswerIndex<'a> {
    fn new(answer: &'a [String]) -> Self {
        let mut slot = HashMap::new();
        let mut need = Vec::new();
        let mut len = 0;
        for tok in answer.iter().filter(|t| !is_punctuation(t)) {
            let next = slot.len();
            let s = *slot.entry(tok.as_str()).or_insert(next);
            if s == need.len() {
                need.push(0);
            }
            need[s] += 1;
            len += 1;
        }
        AnswerIndex { slot, need, len }
    }

    /// Optimal spans start and end on answer tokens: trimming any other
    /// endpoint keeps the overlap and shortens the span. Each start is
    /// extended incrementally and abandoned once no longer span can match
    /// the best F1 so far.
    fn best_in(&self, passage: &[String], lo: usize, hi: usize) -> Option<Candidate> {
        if self.len == 0 || lo > hi {
            return None;
        }
        let slots: Vec<Option<usize>> = passage[lo..=hi].iter().map(|t| self.slot.get(t.as_str()).copied()).collect();
        let content: Vec<bool> = passage[lo..=hi].iter().map(|t| !is_punctuation(t)).collect();
        let mut used = vec![0usize; self.need.len()];
        let mut best: Option<Candidate> = None;
        for s in 0..slots.len() {
            if slots[s].is_none() {
                continue;
            }
            used.iter_mut().for_each(|u| *u = 0);
            let (mut overlap, mut content_len) = (0, 0);
            for e in s..slots.len() {
                if content[e] {
                    content_len += 1;
                }
                if let Some(k) = slots[e] {
                    if used[k] < self.need[k] {
                        used[k] += 1;
                        overlap += 1;
                    }
                    let cand = Candidate {
                        overlap,
                        content: content_len,
                        start: lo + s,
                        end: lo + e,
                    };
                    if best.as_ref().is_none_or(|b| cand.better_than(b, self.len)) {
                        best = Some(cand);
                    }
                }
                if let Some(b) = &best {
                    // Upper bound for longer spans: full overlap at the current content length.
                    if self.len * (b.content + self.len) < b.overlap * (content_len + self.len) {
                        break;
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        words(s)
    }

    #[test]
    fn verbatim_answer_is_found_exactly() {
        let p = toks("Clinton was ineligible to serve a third term due to term limits.");
        let m = locate_answer_span(&p, "third term", None);
        assert_eq!(m.span, TokenSpan::new(6, 7));
        assert_eq!(m.f1, 1.0);
        assert!(!m.weak);
    }

    #[test]
    fn multi_token_phrase_inside_longer_sentence() {
        let p = toks("Bush was seen as the early favorite for the Republican nomination");
        let m = locate_answer_span(&p, "the early favorite", None);
        assert_eq!(m.span, TokenSpan::new(4, 6));
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn window_is_searched_before_passage() {
        let p = toks("Gore won . Later Gore lost .");
        let m = locate_answer_span(&p, "Gore", Some(TokenSpan::new(3, 6)));
        assert_eq!(m.span, TokenSpan::new(4, 4));
        // nothing relevant in the window: whole passage, earliest wins
        let m = locate_answer_span(&p, "won", Some(TokenSpan::new(3, 6)));
        assert_eq!(m.span, TokenSpan::new(1, 1));
    }

    #[test]
    fn zero_overlap_falls_back_to_hint_and_flags() {
        let p = toks("nothing in common here");
        let m = locate_answer_span(&p, "zebra", Some(TokenSpan::new(1, 2)));
        assert!(m.weak);
        assert_eq!(m.span, TokenSpan::new(1, 2));
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn punctuation_is_ignored_for_scoring_and_trimmed() {
        let p = toks("he said , \" Democratic . \"");
        let m = locate_answer_span(&p, "Democratic.", None);
        assert_eq!(m.span, TokenSpan::new(4, 4));
    }

    #[test]
    fn ties_prefer_shorter_then_earlier() {
        // "b" alone scores 2/3 at positions 2 and 4; "a b" only 1/2.
        let p = toks("x a b y b");
        let m = locate_answer_span(&p, "b c", None);
        assert_eq!(m.span, TokenSpan::new(2, 2));
    }
}
