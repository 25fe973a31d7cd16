//! Encoder, unified hierarchical attention and the copy decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{BiLstmParams, LstmParams, Parameters};
use crate::corpus::coref::CorefAnnotation;
use crate::corpus::vocab::{BOS, EOS, UNK};
use crate::corpus::{EvidenceLabel, ProcessedExample, Vocabulary};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// A [`ProcessedExample`] mapped onto vocabulary ids.
///
/// Source tokens missing from the vocabulary get per-example extended ids
/// `vocab_size + k` so they can still be copied.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedExample {
    pub conversation_id: String,
    pub turn_number: usize,
    pub passage_ids: Vec<usize>,
    pub bio: Vec<usize>,
    pub chunk_ids: Vec<usize>,
    pub history_ids: Vec<Vec<usize>>,
    /// Passage then flattened history, in extended ids.
    pub source_ext_ids: Vec<usize>,
    pub oov: Vec<String>,
    /// Target question followed by EOS, in extended ids.
    pub target_ids: Vec<usize>,
    pub token_evidence: Vec<EvidenceLabel>,
    pub coref: Option<CorefAnnotation>,
    pub vocab_size: usize,
}

impl IndexedExample {
    pub fn new(ex: &ProcessedExample, vocab: &Vocabulary) -> Self {
        let v = vocab.len();
        let mut oov: Vec<String> = Vec::new();
        let ext = |tok: &str, oov: &mut Vec<String>| -> usize {
            if let Some(id) = vocab.get(tok) {
                return id;
            }
            match oov.iter().position(|o| o == tok) {
                Some(k) => v + k,
                None => {
                    oov.push(tok.to_string());
                    v + oov.len() - 1
                }
            }
        };
        let source_ext_ids: Vec<usize> = ex
            .passage_tokens
            .iter()
            .chain(ex.history.iter().flatten())
            .map(|t| ext(t, &mut oov))
            .collect();
        let mut target_ids: Vec<usize> = ex
            .target_question
            .iter()
            .map(|t| vocab.get(t).or_else(|| oov.iter().position(|o| o == t).map(|k| v + k)).unwrap_or(UNK))
            .collect();
        target_ids.push(EOS);
        IndexedExample {
            conversation_id: ex.conversation_id.clone(),
            turn_number: ex.turn_number,
            passage_ids: ex.passage_tokens.iter().map(|t| vocab.id(t)).collect(),
            bio: ex.bio_tags.iter().map(|b| b.index()).collect(),
            chunk_ids: ex.chunk_ids.clone(),
            history_ids: ex.history.iter().map(|turn| turn.iter().map(|t| vocab.id(t)).collect()).collect(),
            source_ext_ids,
            oov,
            target_ids,
            token_evidence: ex.token_evidence(),
            coref: ex.coref.clone(),
            vocab_size: v,
        }
    }

    pub fn passage_len(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn history_len(&self) -> usize {
        self.history_ids.iter().map(Vec::len).sum()
    }

    pub fn extended_size(&self) -> usize {
        self.vocab_size + self.oov.len()
    }

    /// Decoder inputs under teacher forcing: BOS then the target prefix.
    pub fn decoder_inputs(&self) -> Vec<usize> {
        std::iter::once(BOS).chain(self.target_ids[..self.target_ids.len() - 1].iter().copied()).collect()
    }

    /// Token string for an extended id.
    pub fn token<'a>(&'a self, id: usize, vocab: &'a Vocabulary) -> &'a str {
        if id >= self.vocab_size {
            self.oov.get(id - self.vocab_size).map_or("<unk>", String::as_str)
        } else {
            vocab.token(id).unwrap_or("<unk>")
        }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.passage_ids.is_empty() {
            return Err(Error::Empty("passage"));
        }
        if self.vocab_size != config.vocab_size {
            return Err(Error::Contract(format!(
                "example indexed with vocabulary of {} tokens, model expects {}",
                self.vocab_size, config.vocab_size
            )));
        }
        if let Some(&c) = self.chunk_ids.iter().find(|&&c| c >= config.chunks) {
            return Err(Error::Contract(format!("chunk id {c} outside {} chunks", config.chunks)));
        }
        Ok(())
    }
}

/// Training mode carries the dropout RNG; evaluation mode is deterministic.
pub enum Mode {
    Eval,
    Train { dropout: f64, rng: Box<ChaCha8Rng> },
}

impl Mode {
    pub fn train(dropout: f64, seed: u64) -> Self {
        Mode::Train {
            dropout,
            rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn dropout(&mut self, g: &mut Graph, x: Var) -> Var {
        match self {
            Mode::Eval => x,
            Mode::Train { dropout, rng } => {
                if *dropout <= 0.0 {
                    return x;
                }
                let (r, c) = g.shape(x);
                let keep = 1.0 - *dropout;
                let mask = (0..r * c)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let m = g.input(Tensor::from_vec(r, c, mask));
                g.mul(x, m)
            }
        }
    }
}

/// Per-step unified attention: passage weights α, conversation weights β
/// (one vector per history turn) and the copy gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAttention {
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub p_gen: f64,
}

impl StepAttention {
    pub fn total(&self) -> f64 {
        self.alpha.iter().sum::<f64>() + self.beta.iter().flatten().sum::<f64>()
    }

    /// Position in the unified memory with the largest weight.
    pub fn argmax(&self) -> usize {
        self.alpha
            .iter()
            .chain(self.beta.iter().flatten())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
            .0
    }
}

pub struct PassageEncoding {
    /// Raw bidirectional states `h^p`.
    pub raw: Var,
    /// Self-attention matrix; row `j` is `a^p_j`.
    pub self_attention: Var,
    /// Gated states `h̃^p`.
    pub states: Var,
    pub final_fwd: Var,
    pub final_bwd: Var,
}

pub struct EncoderOutputs {
    pub passage: PassageEncoding,
    pub conv_token_states: Vec<Var>,
    pub conv_context_states: Option<Var>,
    /// Unified memory: gated passage states stacked over token-level
    /// conversation states.
    pub memory: Var,
    pub passage_len: usize,
    pub history_lens: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

pub struct StepOutput {
    pub state: DecoderState,
    /// `1 x (m + m')` unified attention.
    pub attention: Var,
    pub context: Var,
    pub p_gen: Var,
    /// `1 x |extended vocabulary|` final distribution.
    pub distribution: Var,
}

/// `x_j = [w_j; a_j; t_i; c_j]` for every passage token.
pub fn embed_passage(g: &mut Graph, params: &Parameters, ex: &IndexedExample) -> Var {
    let cfg = params.config();
    let l = params.layout();
    let m = ex.passage_len();
    let word_t = g.param(l.word_emb);
    let ans_t = g.param(l.answer_emb);
    let turn_t = g.param(l.turn_emb);
    let chunk_t = g.param(l.chunk_emb);
    let words = g.gather(word_t, &ex.passage_ids);
    let answers = g.gather(ans_t, &ex.bio);
    let turn = g.gather(turn_t, &vec![cfg.turn_slot(ex.turn_number) - 1; m]);
    let chunks = g.gather(chunk_t, &ex.chunk_ids);
    g.concat_cols(&[words, answers, turn, chunks])
}

fn zeros_state(g: &mut Graph, hidden: usize) -> (Var, Var) {
    let h = g.input(Tensor::zeros(1, hidden));
    let c = g.input(Tensor::zeros(1, hidden));
    (h, c)
}

/// Runs one LSTM direction over the rows of `x` (already projected by
/// `wx` and `b`), returning the per-step hidden states in visiting order.
fn lstm_pass(g: &mut Graph, p: &LstmParams, projected: Var, order: impl Iterator<Item = usize>) -> Vec<Var> {
    let wh = g.param(p.wh);
    let (mut h, mut c) = zeros_state(g, p.hidden);
    let mut out = Vec::new();
    for t in order {
        let xt = g.slice_rows(projected, t, 1);
        let rec = g.matmul(h, wh);
        let pre = g.add(xt, rec);
        let hc = g.lstm_cell(pre, c);
        h = g.slice_cols(hc, 0, p.hidden);
        c = g.slice_cols(hc, p.hidden, p.hidden);
        out.push(h);
    }
    out
}

fn project(g: &mut Graph, p: &LstmParams, x: Var) -> Var {
    let wx = g.param(p.wx);
    let b = g.param(p.b);
    let xw = g.matmul(x, wx);
    g.add_row(xw, b)
}

/// Bidirectional pass. Returns `(states n x 2h, last forward, last backward)`
/// where the backward final state is the one read at position 0.
pub fn bilstm(g: &mut Graph, p: &BiLstmParams, x: Var) -> (Var, Var, Var) {
    let n = g.shape(x).0;
    let fx = project(g, &p.fwd, x);
    let bx = project(g, &p.bwd, x);
    let fwd = lstm_pass(g, &p.fwd, fx, 0..n);
    let mut bwd = lstm_pass(g, &p.bwd, bx, (0..n).rev());
    let (last_f, last_b) = (fwd[n - 1], bwd[n - 1]);
    bwd.reverse();
    let hf = g.concat_rows(&fwd);
    let hb = g.concat_rows(&bwd);
    (g.concat_cols(&[hf, hb]), last_f, last_b)
}

/// Bidirectional LSTM over the passage inputs followed by gated
/// self-matching.
pub fn encode_passage(g: &mut Graph, params: &Parameters, inputs: Var, mode: &mut Mode) -> PassageEncoding {
    let l = params.layout();
    let (raw, final_fwd, final_bwd) = bilstm(g, &l.passage_rnn, inputs);
    let raw = mode.dropout(g, raw);
    let ws = g.param(l.self_ws);
    let hw = g.matmul(raw, ws);
    let scores = g.matmul_nt(hw, raw);
    let self_attention = g.softmax_rows(scores);
    let matched = g.matmul(self_attention, raw);
    let joint = g.concat_cols(&[raw, matched]);
    let wf = g.param(l.self_wf);
    let bf = g.param(l.self_bf);
    let wg = g.param(l.self_wg);
    let bg = g.param(l.self_bg);
    let f_pre = g.matmul(joint, wf);
    let f_pre = g.add_row(f_pre, bf);
    let f = g.tanh(f_pre);
    let g_pre = g.matmul(joint, wg);
    let g_pre = g.add_row(g_pre, bg);
    let gate = g.sigmoid(g_pre);
    let keep = g.one_minus(gate);
    let gf = g.mul(gate, f);
    let gh = g.mul(keep, raw);
    let states = g.add(gf, gh);
    PassageEncoding {
        raw,
        self_attention,
        states,
        final_fwd,
        final_bwd,
    }
}

/// Token-level BiLSTM per history turn, then a context-level BiLSTM over
/// the turn summaries (final forward and backward token states).
pub fn encode_conversation(g: &mut Graph, params: &Parameters, history: &[Vec<usize>], mode: &mut Mode) -> (Vec<Var>, Option<Var>) {
    let l = params.layout();
    if history.is_empty() {
        return (Vec::new(), None);
    }
    let word_t = g.param(l.word_emb);
    let mut token_states = Vec::with_capacity(history.len());
    let mut summaries = Vec::with_capacity(history.len());
    for turn in history {
        let x = g.gather(word_t, turn);
        let x = mode.dropout(g, x);
        let (states, lf, lb) = bilstm(g, &l.token_rnn, x);
        token_states.push(mode.dropout(g, states));
        summaries.push(g.concat_cols(&[lf, lb]));
    }
    let turns = g.concat_rows(&summaries);
    let (context, _, _) = bilstm(g, &l.context_rnn, turns);
    (token_states, Some(context))
}

pub fn encode(g: &mut Graph, params: &Parameters, ex: &IndexedExample, mode: &mut Mode) -> EncoderOutputs {
    let x = embed_passage(g, params, ex);
    let x = mode.dropout(g, x);
    let passage = encode_passage(g, params, x, mode);
    let (conv_token_states, conv_context_states) = encode_conversation(g, params, &ex.history_ids, mode);
    let mut rows = vec![passage.states];
    rows.extend(&conv_token_states);
    let memory = if rows.len() == 1 { passage.states } else { g.concat_rows(&rows) };
    EncoderOutputs {
        passage,
        conv_token_states,
        conv_context_states,
        memory,
        passage_len: ex.passage_len(),
        history_lens: ex.history_ids.iter().map(Vec::len).collect(),
    }
}

/// Decoder state from the final passage encoder states through a learned
/// projection; the cell starts at zero.
pub fn init_decoder(g: &mut Graph, params: &Parameters, enc: &EncoderOutputs) -> DecoderState {
    let l = params.layout();
    let both = g.concat_cols(&[enc.passage.final_fwd, enc.passage.final_bwd]);
    let w = g.param(l.init_w);
    let b = g.param(l.init_b);
    let pre = g.matmul(both, w);
    let pre = g.add_row(pre, b);
    let h = g.tanh(pre);
    let c = g.input(Tensor::zeros(1, params.config().hidden_dim));
    DecoderState { h, c }
}

/// Unified attention over passage and conversation memory.
///
/// Bilinear scores `e^p_j`, `e^w_{k,j}` and `e^c_k` are exponentiated
/// before combination, so `α_j ∝ exp(e^p_j)` and
/// `β_{k,j} ∝ exp(e^w_{k,j}) · exp(e^c_k)`, normalized jointly. This is a
/// softmax over `[e^p ; e^w_{k,j} + e^c_k]`, which also provides the
/// max-subtraction overflow guard. Returns `(attention 1 x (m + m'), context 1 x 2h)`.
pub fn attention_step(g: &mut Graph, params: &Parameters, h_dec: Var, enc: &EncoderOutputs) -> (Var, Var) {
    let l = params.layout();
    let wp = g.param(l.att_wp);
    let qp = g.matmul_nt(h_dec, wp);
    let ep = g.matmul_nt(qp, enc.passage.states);
    let mut parts = vec![ep];
    if let Some(ctx) = enc.conv_context_states {
        let ww = g.param(l.att_ww);
        let wc = g.param(l.att_wc);
        let qw = g.matmul_nt(h_dec, ww);
        let qc = g.matmul_nt(h_dec, wc);
        let ec = g.matmul_nt(qc, ctx);
        for (k, &hw) in enc.conv_token_states.iter().enumerate() {
            let ew = g.matmul_nt(qw, hw);
            let eck = g.slice_cols(ec, k, 1);
            parts.push(g.add_scalar(ew, eck));
        }
    }
    let scores = if parts.len() == 1 { ep } else { g.concat_cols(&parts) };
    let attention = g.softmax_rows(scores);
    let context = g.matmul(attention, enc.memory);
    (attention, context)
}

/// One decoder step: LSTM update on the previous token, unified attention,
/// generation distribution and copy gate, mixed over the extended
/// vocabulary.
#[allow(clippy::too_many_arguments)]
pub fn decode_step(
    g: &mut Graph,
    params: &Parameters,
    prev_token: usize,
    state: DecoderState,
    enc: &EncoderOutputs,
    source_ext_ids: &[usize],
    extended_size: usize,
    mode: &mut Mode,
) -> StepOutput {
    let cfg = params.config();
    let l = params.layout();
    let input_id = if prev_token < cfg.vocab_size { prev_token } else { UNK };
    let word_t = g.param(l.word_emb);
    let w = g.gather(word_t, &[input_id]);
    let w = mode.dropout(g, w);

    let p = &l.decoder_rnn;
    let wx = g.param(p.wx);
    let wh = g.param(p.wh);
    let b = g.param(p.b);
    let xw = g.matmul(w, wx);
    let hw = g.matmul(state.h, wh);
    let pre = g.add(xw, hw);
    let pre = g.add_row(pre, b);
    let hc = g.lstm_cell(pre, state.c);
    let h = g.slice_cols(hc, 0, p.hidden);
    let c = g.slice_cols(hc, p.hidden, p.hidden);

    let (attention, context) = attention_step(g, params, h, enc);

    let wa = g.param(l.out_wa);
    let wv = g.param(l.out_wv);
    let bv = g.param(l.out_bv);
    let hcx = g.concat_cols(&[h, context]);
    let hidden = g.matmul(hcx, wa);
    let hidden = g.tanh(hidden);
    let logits = g.matmul(hidden, wv);
    let logits = g.add_row(logits, bv);
    let p_vocab = g.softmax_rows(logits);

    let gen_w = g.param(l.gen_w);
    let gen_b = g.param(l.gen_b);
    let gate_in = g.concat_cols(&[context, h, w]);
    let gate = g.matmul(gate_in, gen_w);
    let gate = g.add_row(gate, gen_b);
    let p_gen = g.sigmoid(gate);

    let padded = g.pad_cols(p_vocab, extended_size);
    let generated = g.scale_by(padded, p_gen);
    let copy = g.scatter_add(attention, source_ext_ids, extended_size);
    let p_copy = g.one_minus(p_gen);
    let copied = g.scale_by(copy, p_copy);
    let distribution = g.add(generated, copied);

    StepOutput {
        state: DecoderState { h, c },
        attention,
        context,
        p_gen,
        distribution,
    }
}

/// Reads the attention weights of a step back out of the graph.
pub fn step_attention(g: &Graph, step: &StepOutput, enc: &EncoderOutputs) -> StepAttention {
    let a = g.value(step.attention).data();
    let m = enc.passage_len;
    let mut beta = Vec::with_capacity(enc.history_lens.len());
    let mut offset = m;
    for &len in &enc.history_lens {
        beta.push(a[offset..offset + len].to_vec());
        offset += len;
    }
    StepAttention {
        alpha: a[..m].to_vec(),
        beta,
        p_gen: g.value(step.p_gen).item(),
    }
}

pub struct ForwardOutput {
    pub encoder: EncoderOutputs,
    pub steps: Vec<StepOutput>,
}

/// Teacher-forced pass over the target (BOS-prefixed inputs), one step per
/// target token including EOS.
pub fn forward(g: &mut Graph, params: &Parameters, ex: &IndexedExample, mode: &mut Mode) -> ForwardOutput {
    let encoder = encode(g, params, ex, mode);
    let mut state = init_decoder(g, params, &encoder);
    let ext = ex.extended_size();
    let mut steps = Vec::with_capacity(ex.target_ids.len());
    for prev in ex.decoder_inputs() {
        let step = decode_step(g, params, prev, state, &encoder, &ex.source_ext_ids, ext, mode);
        state = step.state;
        steps.push(step);
    }
    ForwardOutput { encoder, steps }
}

/// Plain-value result of a teacher-forced evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub distributions: Vec<Vec<f64>>,
    pub attention: Vec<StepAttention>,
}

pub fn forward_trace(params: &Parameters, ex: &IndexedExample) -> ForwardTrace {
    let mut g = Graph::new(params.tensors());
    let out = forward(&mut g, params, ex, &mut Mode::Eval);
    ForwardTrace {
        distributions: out.steps.iter().map(|s| g.value(s.distribution).data().to_vec()).collect(),
        attention: out.steps.iter().map(|s| step_attention(&g, s, &out.encoder)).collect(),
    }
}
