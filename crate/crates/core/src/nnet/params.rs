//! Learnable weights and their layout.
//!
//! Row-vector convention throughout: a layer maps `x (1 x in)` to
//! `x W (1 x out)`, so every weight matrix is stored `in x out`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::graph::ParamId;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    /// `in x 4h`, gate order input, forget, candidate, output.
    pub wx: ParamId,
    /// `h x 4h`
    pub wh: ParamId,
    /// `1 x 4h`
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub word_emb: ParamId,
    pub answer_emb: ParamId,
    pub turn_emb: ParamId,
    pub chunk_emb: ParamId,
    pub passage_rnn: BiLstmParams,
    /// Self-matching bilinear form: score(j, k) = h_j W_s h_k^T.
    pub self_ws: ParamId,
    pub self_wf: ParamId,
    pub self_bf: ParamId,
    pub self_wg: ParamId,
    pub self_bg: ParamId,
    pub token_rnn: BiLstmParams,
    pub context_rnn: BiLstmParams,
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub decoder_rnn: LstmParams,
    /// Bilinear attention forms, each `2h x h`: e = m W h_d^T.
    pub att_wp: ParamId,
    pub att_ww: ParamId,
    pub att_wc: ParamId,
    pub out_wa: ParamId,
    pub out_wv: ParamId,
    pub out_bv: ParamId,
    pub gen_w: ParamId,
    pub gen_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

struct Builder {
    rng: ChaCha8Rng,
    scale: f64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Builder {
    fn push(&mut self, name: &str, t: Tensor) -> ParamId {
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    fn uniform(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let s = self.scale;
        let data = (0..rows * cols).map(|_| self.rng.random_range(-s..s)).collect();
        self.push(name, Tensor::from_vec(rows, cols, data))
    }

    fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.push(name, Tensor::zeros(rows, cols))
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> LstmParams {
        let wx = self.uniform(&format!("{name}.wx"), input, 4 * hidden);
        let wh = self.uniform(&format!("{name}.wh"), hidden, 4 * hidden);
        let mut bias = Tensor::zeros(1, 4 * hidden);
        // forget gate starts open
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let b = self.push(&format!("{name}.b"), bias);
        LstmParams { wx, wh, b, hidden }
    }

    fn bilstm(&mut self, name: &str, input: usize, hidden: usize) -> BiLstmParams {
        BiLstmParams {
            fwd: self.lstm(&format!("{name}.fwd"), input, hidden),
            bwd: self.lstm(&format!("{name}.bwd"), input, hidden),
        }
    }
}

impl Parameters {
    /// Fresh parameters drawn uniformly from `±init_scale` with the
    /// configured seed; biases start at zero except LSTM forget gates.
    pub fn init(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        let mem = config.memory_dim();
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            scale: config.init_scale,
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let layout = Layout {
            word_emb: b.uniform("emb.word", config.vocab_size, config.word_dim),
            answer_emb: b.uniform("emb.answer", 3, config.answer_pos_dim),
            turn_emb: b.uniform("emb.turn", config.n_max, config.turn_dim),
            chunk_emb: b.uniform("emb.chunk", config.chunks, config.chunk_dim),
            passage_rnn: b.bilstm("passage", config.passage_input_dim(), h),
            self_ws: b.uniform("self.ws", mem, mem),
            self_wf: b.uniform("self.wf", 2 * mem, mem),
            self_bf: b.zeros("self.bf", 1, mem),
            self_wg: b.uniform("self.wg", 2 * mem, mem),
            self_bg: b.zeros("self.bg", 1, mem),
            token_rnn: b.bilstm("conv.token", config.word_dim, h),
            context_rnn: b.bilstm("conv.context", mem, h),
            init_w: b.uniform("decoder.init.w", mem, h),
            init_b: b.zeros("decoder.init.b", 1, h),
            decoder_rnn: b.lstm("decoder", config.word_dim, h),
            att_wp: b.uniform("attention.wp", mem, h),
            att_ww: b.uniform("attention.ww", mem, h),
            att_wc: b.uniform("attention.wc", mem, h),
            out_wa: b.uniform("output.wa", h + mem, h),
            out_wv: b.uniform("output.wv", h, config.vocab_size),
            out_bv: b.zeros("output.bv", 1, config.vocab_size),
            gen_w: b.uniform("copy.w", mem + h + config.word_dim, 1),
            gen_b: b.zeros("copy.b", 1, 1),
        };
        Parameters {
            config: config.clone(),
            layout,
            names: b.names,
            tensors: b.tensors,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Replaces all tensors, checking names and shapes against the layout.
    pub(crate) fn load_tensors(&mut self, named: Vec<(String, Tensor)>) -> Result<(), String> {
        if named.len() != self.tensors.len() {
            return Err(format!("expected {} tensors, found {}", self.tensors.len(), named.len()));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(format!("tensor {i} is {name:?}, expected {:?}", self.names[i]));
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), self.tensors[i].shape()));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}
