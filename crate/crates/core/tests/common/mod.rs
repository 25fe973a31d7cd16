//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use coqg_core::corpus::coref::CorefAnnotation;
use coqg_core::corpus::vocab::{A, EOS, Q};
use coqg_core::corpus::{preprocess, EvidenceLabel, HeuristicProvider, PipelineOptions, Preprocessed, Vocabulary};
use coqg_core::graph::{Graph, ParamId};
use coqg_core::nnet::{IndexedExample, ModelConfig, Mode, Parameters};
use coqg_core::objectives::{loss_graph, Objective, Trainer};
use coqg_core::synthetic::{generate, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn micro_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        answer_pos_dim: 2,
        turn_dim: 2,
        chunk_dim: 2,
        hidden_dim: 8,
        chunks: 3,
        n_max: 5,
        vocab_size,
        dropout: 0.0,
        init_scale: 0.5,
        ..ModelConfig::default()
    }
}

/// A vocabulary of `size` entries: the reserved symbols then `w0, w1, ...`.
pub fn toy_vocab(size: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..size - 6).map(|i| format!("w{i}")).collect(), 1)
}

/// Random indexed example over ids `6..vocab_size`, plus `oov` source tokens
/// outside the vocabulary. `history_turns` may be zero.
pub fn random_example(rng: &mut ChaCha8Rng, cfg: &ModelConfig, passage_len: usize, history_turns: usize, target_len: usize, oov: usize) -> IndexedExample {
    let v = cfg.vocab_size;
    let word = |rng: &mut ChaCha8Rng| rng.random_range(6..v);
    let passage_ids: Vec<usize> = (0..passage_len).map(|_| word(rng)).collect();
    let start = rng.random_range(0..passage_len);
    let end = rng.random_range(start..passage_len);
    let bio = (0..passage_len)
        .map(|j| if j == start { 0 } else if j > start && j <= end { 1 } else { 2 })
        .collect();
    let chunk_ids = (0..passage_len).map(|j| j * cfg.chunks / passage_len).collect();
    let history_ids: Vec<Vec<usize>> = (0..history_turns)
        .map(|_| {
            let n = rng.random_range(1..5);
            let mut t = vec![Q];
            t.extend((0..n).map(|_| word(rng)));
            t.push(A);
            t.push(word(rng));
            t
        })
        .collect();
    let mut source_ext_ids: Vec<usize> = passage_ids.iter().chain(history_ids.iter().flatten()).copied().collect();
    for k in 0..oov.min(source_ext_ids.len()) {
        source_ext_ids[k] = v + k;
    }
    let mut target_ids: Vec<usize> = (0..target_len).map(|_| word(rng)).collect();
    if oov > 0 && target_len > 0 {
        target_ids[0] = v;
    }
    target_ids.push(EOS);
    let labels = [EvidenceLabel::CES, EvidenceLabel::HES, EvidenceLabel::NONE];
    let mut token_evidence: Vec<EvidenceLabel> = (0..passage_len).map(|_| labels[rng.random_range(0..3)]).collect();
    token_evidence[0] = EvidenceLabel::CES;
    let history_len: usize = history_ids.iter().map(Vec::len).sum();
    let coref = (history_len > 1 && target_len > 0).then(|| CorefAnnotation {
        mention_positions: vec![1],
        pronoun: target_len - 1,
        confidence: 0.8,
    });
    IndexedExample {
        conversation_id: "random".into(),
        turn_number: rng.random_range(1..9),
        passage_ids,
        bio,
        chunk_ids,
        history_ids,
        source_ext_ids,
        oov: (0..oov).map(|k| format!("oov{k}")).collect(),
        target_ids,
        token_evidence,
        coref,
        vocab_size: v,
    }
}

pub fn random_params(cfg: &ModelConfig, seed: u64) -> Parameters {
    Parameters::init(&ModelConfig { seed, ..cfg.clone() })
}

/// Synthetic conversations run through the full preprocessing pipeline.
pub fn synthetic_corpus(conversations: usize, seed: u64) -> Preprocessed {
    let convs = generate(&SyntheticConfig {
        conversations,
        seed,
        ..SyntheticConfig::default()
    });
    preprocess(convs, PipelineOptions::default(), &HeuristicProvider)
}

pub fn index_all(examples: &[coqg_core::corpus::ProcessedExample], vocab: &Vocabulary) -> Vec<IndexedExample> {
    examples.iter().map(|e| IndexedExample::new(e, vocab)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Path of a CoQA release file under `COQG_DATA_DIR`, if present.
pub fn coqa_file(name: &str) -> Option<std::path::PathBuf> {
    let dir = std::env::var_os("COQG_DATA_DIR")?;
    let path = std::path::Path::new(&dir).join(name);
    path.is_file().then_some(path)
}

pub const COQA_TRAIN: &str = "coqa-train-v1.0.json";
pub const COQA_DEV: &str = "coqa-dev-v1.0.json";

/// Exhaustive span search: every `(i, j)` inside the window, then the whole
/// passage when the window has no overlap. F1 over content tokens with
/// clipped counts; ties to the shorter, then earlier span.
pub fn brute_force_span(passage: &[String], answer: &[String], window: Option<(usize, usize)>) -> Option<(usize, usize, f64)> {
    use coqg_core::corpus::tokenize::is_punctuation;
    use std::collections::HashMap;
    let content: Vec<&String> = answer.iter().filter(|t| !is_punctuation(t)).collect();
    let best_in = |lo: usize, hi: usize| -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in lo..=hi {
            for j in i..=hi {
                let span: Vec<&String> = passage[i..=j].iter().filter(|t| !is_punctuation(t)).collect();
                let mut want: HashMap<&String, i64> = HashMap::new();
                for t in &content {
                    *want.entry(*t).or_insert(0) += 1;
                }
                let mut overlap = 0;
                for t in &span {
                    if let Some(c) = want.get_mut(*t) {
                        if *c > 0 {
                            *c -= 1;
                            overlap += 1;
                        }
                    }
                }
                if overlap == 0 {
                    continue;
                }
                let f1 = 2.0 * overlap as f64 / (span.len() + content.len()) as f64;
                let better = match best {
                    None => true,
                    Some((bi, bj, bf)) => f1 > bf + 1e-12 || ((f1 - bf).abs() <= 1e-12 && ((j - i, i) < (bj - bi, bi))),
                };
                if better {
                    best = Some((i, j, f1));
                }
            }
        }
        best
    };
    window
        .and_then(|(lo, hi)| best_in(lo, hi.min(passage.len() - 1)))
        .or_else(|| best_in(0, passage.len() - 1))
}

/// Random passage/answer pair drawn from a small alphabet so that partial
/// overlaps, repeats and ties are common.
pub fn random_span_instance(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>, Option<(usize, usize)>) {
    let alphabet = ["the", "a", "he", "boat", "red", "sea", ",", ".", "of", "old", "man", "!"];
    let m = rng.random_range(1..40);
    let passage: Vec<String> = (0..m).map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string()).collect();
    let answer: Vec<String> = if rng.random_bool(0.3) {
        let i = rng.random_range(0..m);
        let j = rng.random_range(i..m.min(i + 6));
        passage[i..=j].to_vec()
    } else {
        (0..rng.random_range(1..6)).map(|_| alphabet[rng.random_range(0..alphabet.len())].to_string()).collect()
    };
    let window = rng.random_bool(0.7).then(|| {
        let i = rng.random_range(0..m);
        (i, rng.random_range(i..m))
    });
    (passage, answer, window)
}

/// Mention share of conversation attention and pronoun probability at the
/// pronoun's teacher-forced step.
pub fn coref_measures(params: &Parameters, ex: &IndexedExample) -> (f64, f64) {
    let coref = ex.coref.as_ref().expect("annotated example");
    let trace = coqg_core::nnet::forward_trace(params, ex);
    let t = coref.pronoun;
    let beta: Vec<f64> = trace.attention[t].beta.iter().flatten().copied().collect();
    let mention: f64 = coref.mention_positions.iter().map(|&p| beta[p]).sum();
    let ratio = mention / beta.iter().sum::<f64>();
    (ratio, trace.distributions[t][ex.target_ids[t]])
}

/// Model used by the overfitting checks: small embeddings, no dropout.
pub fn overfit_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        word_dim: 32,
        answer_pos_dim: 8,
        turn_dim: 8,
        chunk_dim: 8,
        hidden_dim: 32,
        vocab_size,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// Joint-objective training for a fixed number of epochs; returns the
/// final parameters and the last epoch's mean NLL.
pub fn fit(cfg: &ModelConfig, examples: &[IndexedExample], epochs: usize, batch_size: usize, learning_rate: f64) -> (Parameters, f64) {
    use coqg_core::objectives::TrainConfig;
    let tc = TrainConfig {
        learning_rate,
        epochs,
        batch_size,
        clip_norm: 5.0,
        seed: 1,
    };
    let mut trainer = Trainer::new(Parameters::init(cfg), tc).unwrap();
    let mut nll = f64::NAN;
    for epoch in 1..=epochs {
        nll = trainer.epoch(examples, epoch, Objective::Joint).unwrap().loss.nll;
    }
    (trainer.params, nll)
}

/// Gold question ids without the trailing EOS.
pub fn gold_ids(ex: &IndexedExample) -> &[usize] {
    &ex.target_ids[..ex.target_ids.len() - 1]
}

pub fn loss_value(params: &Parameters, ex: &IndexedExample, objective: Objective) -> f64 {
    let mut g = Graph::new(params.tensors());
    let lg = loss_graph(&mut g, params, ex, &mut Mode::Eval, objective).unwrap();
    g.value(lg.loss).item()
}

/// Worst per-tensor relative error `|a - n| / max(|a|, |n|)` over all
/// parameter tensors (norms over the whole tensor).
pub fn worst_relative_error(params: &Parameters, ex: &IndexedExample, objective: Objective) -> (f64, String) {
    let (grads, _, _, _) = Trainer::example_gradients(params, ex, &mut Mode::Eval, objective).unwrap();
    // fourth-order central stencil keeps both truncation and round-off
    // far below the tolerance even for tensors with tiny gradients
    let h = 1e-3;
    let mut worst = (0.0, String::new());
    let mut probe = params.clone();
    for (i, name) in params.names().iter().enumerate() {
        let id = ParamId(i);
        let n = params.get(id).len();
        let mut numeric = vec![0.0; n];
        for k in 0..n {
            let orig = params.get(id).data()[k];
            let mut at = |x: f64| {
                probe.get_mut(id).data_mut()[k] = x;
                loss_value(&probe, ex, objective)
            };
            let d1 = at(orig + h) - at(orig - h);
            let d2 = at(orig + 2.0 * h) - at(orig - 2.0 * h);
            probe.get_mut(id).data_mut()[k] = orig;
            numeric[k] = (8.0 * d1 - d2) / (12.0 * h);
        }
        let analytic: Vec<f64> = grads.get(id).map_or(vec![0.0; n], |t| t.data().to_vec());
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if scale < 1e-9 { diff } else { diff / scale };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}
