//! CoQA ingestion and example construction.

pub mod coqa;
pub mod coref;
pub mod example;
pub mod span;
pub mod split;
pub mod tokenize;
pub mod vocab;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use coqa::{filter_turns, load_coqa, normalize_answer, parse_coqa, CharSpan, RawConversation, RawTurn};
pub use coref::{annotate_coreference, CorefAnnotation, CorefProvider, FileProvider, HeuristicProvider};
pub use example::{assign_chunks, build_examples, BioTag, BuildOptions, EvidenceLabel, ProcessedExample};
pub use span::{locate_answer_span, SpanMatch};
pub use split::split_dataset;
pub use tokenize::{BasicTokenizer, Token, TokenSpan, Tokenizer};
pub use vocab::{build_vocabulary, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PipelineOptions {
    pub build: BuildOptions,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            build: BuildOptions::default(),
            min_freq: 1,
            seed: 13,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub conversations: usize,
    pub qa_pairs: usize,
    pub filtered_pairs: usize,
    pub filtered_percent: f64,
    pub examples: usize,
    pub mean_span_f1: f64,
    pub weakly_aligned: usize,
    pub coref_annotated: usize,
    pub coref_coverage: f64,
    pub coref_dropped: usize,
    pub mean_passage_tokens: f64,
    pub mean_question_tokens: f64,
    pub mean_answer_tokens: f64,
    pub vocab_size: usize,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub test_examples: usize,
    pub train_conversations: usize,
    pub validation_conversations: usize,
    pub test_conversations: usize,
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub train: Vec<ProcessedExample>,
    pub validation: Vec<ProcessedExample>,
    pub test: Vec<ProcessedExample>,
    pub vocab: Vocabulary,
    pub report: PreprocessReport,
}

/// Examples for one conversation with coreference annotations attached.
pub fn process_conversation(conv: &RawConversation, opts: BuildOptions, provider: &dyn CorefProvider) -> Vec<ProcessedExample> {
    let mut examples = build_examples(conv, opts);
    for ex in &mut examples {
        ex.coref = annotate_coreference(ex, conv, provider);
    }
    examples
}

/// Full pipeline: split conversations, build examples, annotate
/// coreference, build the vocabulary from the training split.
pub fn preprocess(convs: Vec<RawConversation>, opts: PipelineOptions, provider: &dyn CorefProvider) -> Preprocessed {
    let qa_pairs: usize = convs.iter().map(|c| c.turns.len()).sum();
    let filtered_pairs: usize = convs.iter().map(|c| c.turns.len() - filter_turns(c).turns.len()).sum();
    let mean_passage_tokens = mean(convs.iter().map(|c| BasicTokenizer.tokenize(&c.passage_text).len() as f64));
    let mean_answer_tokens = mean(
        convs
            .iter()
            .flat_map(|c| c.turns.iter())
            .map(|t| tokenize::words(&t.answer).len() as f64),
    );
    let conversations = convs.len();

    let (train_c, val_c, test_c) = split_dataset(convs, opts.seed);
    let run = |cs: &[RawConversation]| -> Vec<ProcessedExample> {
        cs.par_iter()
            .map(|c| process_conversation(c, opts.build, provider))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let train = run(&train_c);
    let validation = run(&val_c);
    let test = run(&test_c);
    let vocab = build_vocabulary(&train, opts.min_freq);

    let all: Vec<&ProcessedExample> = train.iter().chain(&validation).chain(&test).collect();
    let coref_annotated = all.iter().filter(|e| e.coref.is_some()).count();
    let report = PreprocessReport {
        conversations,
        qa_pairs,
        filtered_pairs,
        filtered_percent: percent(filtered_pairs, qa_pairs),
        examples: all.len(),
        mean_span_f1: mean(all.iter().map(|e| e.answer_f1)),
        weakly_aligned: all.iter().filter(|e| e.weakly_aligned).count(),
        coref_annotated,
        coref_coverage: percent(coref_annotated, all.len()) / 100.0,
        coref_dropped: provider.dropped(),
        mean_passage_tokens,
        mean_question_tokens: mean(all.iter().map(|e| e.target_question.len() as f64)),
        mean_answer_tokens,
        vocab_size: vocab.len(),
        train_examples: train.len(),
        validation_examples: validation.len(),
        test_examples: test.len(),
        train_conversations: train_c.len(),
        validation_conversations: val_c.len(),
        test_conversations: test_c.len(),
    };
    Preprocessed {
        train,
        validation,
        test,
        vocab,
        report,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}
