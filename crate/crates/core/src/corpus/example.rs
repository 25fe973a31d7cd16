//! Turning a conversation into per-turn training examples.

use serde::{Deserialize, Serialize};

use super::coqa::{is_uninformative_answer, RawConversation};
use super::coref::CorefAnnotation;
use super::span::locate_answer_span;
use super::tokenize::{char_range_to_tokens, split_sentences, BasicTokenizer, TokenSpan, Tokenizer};
use super::vocab::{A_MARK, Q_MARK};

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BioTag {
    B_ANS,
    I_ANS,
    O,
}

impl BioTag {
    pub fn index(self) -> usize {
        match self {
            BioTag::B_ANS => 0,
            BioTag::I_ANS => 1,
            BioTag::O => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvidenceLabel {
    CES,
    HES,
    NONE,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedExample {
    pub conversation_id: String,
    pub passage_tokens: Vec<String>,
    pub sentence_boundaries: Vec<TokenSpan>,
    pub answer_span: TokenSpan,
    pub bio_tags: Vec<BioTag>,
    pub chunk_ids: Vec<usize>,
    pub turn_number: usize,
    pub history: Vec<Vec<String>>,
    pub target_question: Vec<String>,
    pub evidence: Vec<EvidenceLabel>,
    pub coref: Option<CorefAnnotation>,
    pub answer_f1: f64,
    pub weakly_aligned: bool,
}

impl ProcessedExample {
    /// History turns concatenated into one sequence (the coordinate system
    /// of [`CorefAnnotation::mention_positions`]).
    pub fn flat_history(&self) -> Vec<&str> {
        self.history.iter().flatten().map(String::as_str).collect()
    }

    pub fn history_len(&self) -> usize {
        self.history.iter().map(Vec::len).sum()
    }

    /// Evidence label of every passage token.
    pub fn token_evidence(&self) -> Vec<EvidenceLabel> {
        let mut out = vec![EvidenceLabel::NONE; self.passage_tokens.len()];
        for (span, &label) in self.sentence_boundaries.iter().zip(&self.evidence) {
            for slot in &mut out[span.start..=span.end] {
                *slot = label;
            }
        }
        out
    }

    pub fn answer_tokens(&self) -> &[String] {
        &self.passage_tokens[self.answer_span.start..=self.answer_span.end]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    /// History window `n`.
    pub history_turns: usize,
    /// Passage chunk count `L`.
    pub chunks: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            history_turns: 3,
            chunks: 10,
        }
    }
}

/// `floor(t * chunks / len)` for every token position `t`.
pub fn assign_chunks(passage_len: usize, chunks: usize) -> Vec<usize> {
    assert!(chunks >= 1 && passage_len >= 1, "need at least one token and one chunk");
    (0..passage_len).map(|t| t * chunks / passage_len).collect()
}

pub fn bio_tags(len: usize, span: TokenSpan) -> Vec<BioTag> {
    (0..len)
        .map(|i| {
            if i == span.start {
                BioTag::B_ANS
            } else if span.contains(i) {
                BioTag::I_ANS
            } else {
                BioTag::O
            }
        })
        .collect()
}

/// Recovers the answer span from BIO tags: the single maximal B..I run.
pub fn span_from_bio(tags: &[BioTag]) -> Option<TokenSpan> {
    let start = tags.iter().position(|&t| t == BioTag::B_ANS)?;
    let mut end = start;
    while end + 1 < tags.len() && tags[end + 1] == BioTag::I_ANS {
        end += 1;
    }
    let extra = tags
        .iter()
        .enumerate()
        .any(|(i, &t)| t != BioTag::O && (i < start || i > end));
    (!extra).then_some(TokenSpan::new(start, end))
}

/// `⟨q⟩ question ⟨a⟩ answer` as one token sequence.
pub fn render_turn(question: &str, answer: &str, tokenizer: &dyn Tokenizer) -> Vec<String> {
    let mut out = vec![Q_MARK.to_string()];
    out.extend(tokenizer.tokenize(question).into_iter().map(|t| t.text));
    out.push(A_MARK.to_string());
    out.extend(tokenizer.tokenize(answer).into_iter().map(|t| t.text));
    out
}

fn covering_sentences(sentences: &[TokenSpan], span: TokenSpan) -> Vec<usize> {
    sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.overlaps(&span))
        .map(|(i, _)| i)
        .collect()
}

/// One example per turn with an informative answer. Turns filtered out as
/// targets still appear in the history windows of later turns. HES covers
/// sentences holding the rationale of any earlier turn that do not also hold
/// the current one.
pub fn build_examples(conv: &RawConversation, opts: BuildOptions) -> Vec<ProcessedExample> {
    build_examples_with(conv, opts, &BasicTokenizer)
}

pub fn build_examples_with(conv: &RawConversation, opts: BuildOptions, tokenizer: &dyn Tokenizer) -> Vec<ProcessedExample> {
    let tokens = tokenizer.tokenize(&conv.passage_text);
    if tokens.is_empty() {
        return Vec::new();
    }
    let passage: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    let sentences = split_sentences(&conv.passage_text, &tokens);
    let chunk_ids = assign_chunks(passage.len(), opts.chunks);
    let rationales: Vec<Option<TokenSpan>> = conv
        .turns
        .iter()
        .map(|t| t.rationale.and_then(|r| char_range_to_tokens(&tokens, r.start, r.end)))
        .collect();
    let rendered: Vec<Vec<String>> = conv
        .turns
        .iter()
        .map(|t| render_turn(&t.question, &t.answer, tokenizer))
        .collect();

    let mut out = Vec::new();
    for (i, turn) in conv.turns.iter().enumerate() {
        if is_uninformative_answer(&turn.answer) {
            continue;
        }
        let window = rationales[i].map(|r| {
            let covering = covering_sentences(&sentences, r);
            match (covering.first(), covering.last()) {
                (Some(&a), Some(&b)) => TokenSpan::new(sentences[a].start, sentences[b].end),
                _ => r,
            }
        });
        let located = locate_answer_span(&passage, &turn.answer, window);

        let current = rationales[i].unwrap_or(located.span);
        let mut evidence = vec![EvidenceLabel::NONE; sentences.len()];
        for r in rationales[..i].iter().flatten() {
            for s in covering_sentences(&sentences, *r) {
                evidence[s] = EvidenceLabel::HES;
            }
        }
        for s in covering_sentences(&sentences, current) {
            evidence[s] = EvidenceLabel::CES;
        }

        let first = i.saturating_sub(opts.history_turns);
        out.push(ProcessedExample {
            conversation_id: conv.id.clone(),
            passage_tokens: passage.clone(),
            sentence_boundaries: sentences.clone(),
            answer_span: located.span,
            bio_tags: bio_tags(passage.len(), located.span),
            chunk_ids: chunk_ids.clone(),
            turn_number: turn.turn_id,
            history: rendered[first..i].to_vec(),
            target_question: tokenizer.tokenize(&turn.question).into_iter().map(|t| t.text).collect(),
            evidence,
            coref: None,
            answer_f1: located.f1,
            weakly_aligned: located.weak,
        });
    }
    out
}
