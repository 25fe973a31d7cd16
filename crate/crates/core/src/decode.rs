//! Beam-search question generation with unigram blocking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{BOS, EOS, PAD, UNK};
use crate::corpus::Vocabulary;
use crate::graph::Graph;
use crate::nnet::{decode_step, encode, init_decoder, step_attention, DecoderState, IndexedExample, Mode, Parameters, StepAttention};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum number of decoding steps, EOS included.
    pub max_len: usize,
    pub block_unigrams: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_len: 15,
            block_unigrams: true,
        }
    }
}

/// A partial or finished decoding path.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    /// Extended-vocabulary ids, EOS included when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: DecoderState,
    pub attention: Vec<StepAttention>,
}

impl Hypothesis {
    /// Length-normalized score used for the final ranking.
    pub fn average_log_prob(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Extended-vocabulary ids without the trailing EOS.
    pub token_ids: Vec<usize>,
    /// Surface tokens with UNKs replaced by the most attended source token.
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub score: f64,
    /// False when no hypothesis reached EOS within `max_len` steps.
    pub finished: bool,
    /// One record per decoding step (including the EOS step).
    pub attention: Vec<StepAttention>,
}

impl GenerationResult {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

fn candidate_allowed(token: usize, history: &[usize], block: bool) -> bool {
    token != PAD && token != BOS && !(block && history.contains(&token))
}

/// Orders by descending log-probability, then ascending origin and token.
fn rank(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

fn surface(ex: &IndexedExample, vocab: &Vocabulary, tokens: &[usize], attention: &[StepAttention]) -> Vec<String> {
    tokens
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            if id == UNK {
                let pos = attention[t].argmax();
                let src = ex.source_ext_ids.get(pos).copied().unwrap_or(UNK);
                ex.token(src, vocab).to_string()
            } else {
                ex.token(id, vocab).to_string()
            }
        })
        .collect()
}

fn finish(ex: &IndexedExample, vocab: &Vocabulary, h: Hypothesis, finished: bool) -> GenerationResult {
    let score = h.average_log_prob();
    let mut ids = h.tokens;
    if ids.last() == Some(&EOS) {
        ids.pop();
    }
    GenerationResult {
        tokens: surface(ex, vocab, &ids, &h.attention),
        token_ids: ids,
        log_prob: h.log_prob,
        score,
        finished,
        attention: h.attention,
    }
}

/// Beam search over the extended vocabulary.
///
/// Each step expands every live hypothesis, keeps the `beam_size` best
/// extensions by cumulative log-probability, and retires those ending in
/// EOS. The returned hypothesis is the finished one with the highest
/// average log-probability, or the best unfinished one when none finished.
pub fn beam_search(params: &Parameters, ex: &IndexedExample, vocab: &Vocabulary, cfg: BeamConfig) -> Result<GenerationResult> {
    let beams = beam_hypotheses(params, ex, cfg)?;
    let best_of = |hs: Vec<Hypothesis>| {
        hs.into_iter().fold(None::<Hypothesis>, |best, h| match best {
            Some(b) if b.average_log_prob() >= h.average_log_prob() => Some(b),
            _ => Some(h),
        })
    };
    if let Some(h) = best_of(beams.finished) {
        return Ok(finish(ex, vocab, h, true));
    }
    match best_of(beams.live) {
        Some(h) => Ok(finish(ex, vocab, h, false)),
        None => Err(Error::Contract("beam search produced no hypothesis".into())),
    }
}

/// Every hypothesis that reached EOS, in retirement order, and those still
/// open when the step budget ran out.
pub struct BeamHypotheses {
    pub finished: Vec<Hypothesis>,
    pub live: Vec<Hypothesis>,
    /// Largest number of live hypotheses held after any step.
    pub max_width: usize,
}

pub fn beam_hypotheses(params: &Parameters, ex: &IndexedExample, cfg: BeamConfig) -> Result<BeamHypotheses> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam_size must be at least 1".into()));
    }
    ex.check(params.config())?;
    let mut g = Graph::new(params.tensors());
    let mut mode = Mode::Eval;
    let enc = encode(&mut g, params, ex, &mut mode);
    let init = init_decoder(&mut g, params, &enc);
    let ext = ex.extended_size();

    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: init,
        attention: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut max_width = live.len();

    for _ in 0..cfg.max_len {
        let mut steps = Vec::with_capacity(live.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let step = decode_step(&mut g, params, prev, h.state, &enc, &ex.source_ext_ids, ext, &mut mode);
            let dist = g.value(step.distribution).data();
            let mut local: Vec<(f64, usize, usize)> = (0..ext)
                .filter(|&tok| candidate_allowed(tok, &h.tokens, cfg.block_unigrams))
                .map(|tok| (dist[tok].max(1e-300).ln(), hi, tok))
                .collect();
            // rank on the step log-probability so that adding the shared
            // prefix score cannot merge distinct candidates into ties
            local.sort_by(rank);
            local.truncate(cfg.beam_size);
            candidates.extend(local.into_iter().map(|(lp, hi, tok)| (h.log_prob + lp, hi, tok)));
            steps.push(step);
        }
        candidates.sort_by(rank);
        candidates.truncate(cfg.beam_size);

        let mut next = Vec::with_capacity(candidates.len());
        for (lp, hi, tok) in candidates {
            let parent = &live[hi];
            let mut attention = parent.attention.clone();
            attention.push(step_attention(&g, &steps[hi], &enc));
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let h = Hypothesis {
                tokens,
                log_prob: lp,
                state: steps[hi].state,
                attention,
            };
            if tok == EOS {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        max_width = max_width.max(live.len());
        if live.is_empty() {
            break;
        }
    }

    Ok(BeamHypotheses {
        finished,
        live,
        max_width,
    })
}

/// Greedy decoding under the same candidate constraints as beam search:
/// the most probable allowed token at every step (lowest id on ties).
pub fn greedy(params: &Parameters, ex: &IndexedExample, vocab: &Vocabulary, max_len: usize, block_unigrams: bool) -> Result<GenerationResult> {
    ex.check(params.config())?;
    let mut g = Graph::new(params.tensors());
    let mut mode = Mode::Eval;
    let enc = encode(&mut g, params, ex, &mut mode);
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: init_decoder(&mut g, params, &enc),
        attention: Vec::new(),
    };
    let ext = ex.extended_size();
    for _ in 0..max_len {
        let prev = h.tokens.last().copied().unwrap_or(BOS);
        let step = decode_step(&mut g, params, prev, h.state, &enc, &ex.source_ext_ids, ext, &mut mode);
        let dist = g.value(step.distribution).data();
        let mut best: Option<(usize, f64)> = None;
        for (tok, &p) in dist.iter().enumerate().take(ext) {
            let lp = p.max(1e-300).ln();
            if candidate_allowed(tok, &h.tokens, block_unigrams) && best.is_none_or(|(_, b)| lp > b) {
                best = Some((tok, lp));
            }
        }
        let Some((tok, lp)) = best else { break };
        h.log_prob += lp;
        h.attention.push(step_attention(&g, &step, &enc));
        h.state = step.state;
        h.tokens.push(tok);
        if tok == EOS {
            return Ok(finish(ex, vocab, h, true));
        }
    }
    Ok(finish(ex, vocab, h, false))
}

/// Strongest attention source at one decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopSource {
    /// `"passage"` or `"history"`.
    pub source: String,
    /// Index within the passage or the flattened history.
    pub position: usize,
    pub token: String,
    pub weight: f64,
}

/// One line of generation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub conversation_id: String,
    pub turn_id: usize,
    pub question: String,
    pub finished: bool,
    pub score: f64,
    pub top_sources: Vec<TopSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<StepAttention>>,
}

impl GenerationRecord {
    pub fn new(ex: &IndexedExample, vocab: &Vocabulary, result: &GenerationResult, with_trace: bool) -> Self {
        let m = ex.passage_len();
        let top_sources = result
            .attention
            .iter()
            .map(|a| {
                let pos = a.argmax();
                let weight = if pos < m {
                    a.alpha[pos]
                } else {
                    a.beta.iter().flatten().nth(pos - m).copied().unwrap_or(0.0)
                };
                TopSource {
                    source: if pos < m { "passage" } else { "history" }.to_string(),
                    position: if pos < m { pos } else { pos - m },
                    token: ex.token(ex.source_ext_ids[pos], vocab).to_string(),
                    weight,
                }
            })
            .collect();
        GenerationRecord {
            conversation_id: ex.conversation_id.clone(),
            turn_id: ex.turn_number,
            question: result.text(),
            finished: result.finished,
            score: result.score,
            top_sources,
            attention: with_trace.then(|| result.attention.clone()),
        }
    }
}
