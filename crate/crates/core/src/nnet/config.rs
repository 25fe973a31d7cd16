use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hyperparameters of the network and its losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub answer_pos_dim: usize,
    pub turn_dim: usize,
    pub chunk_dim: usize,
    /// Width of each recurrent direction and of the decoder state.
    pub hidden_dim: usize,
    /// Passage chunk count `L`.
    pub chunks: usize,
    /// Turn numbers above this share the last turn embedding.
    pub n_max: usize,
    pub vocab_size: usize,
    /// Weight of the mention-attention term of the coreference loss.
    pub lambda1: f64,
    /// Weight of the pronoun-probability term of the coreference loss.
    pub lambda2: f64,
    /// Weight of the CES term of the flow loss.
    pub lambda3: f64,
    /// Weight of the HES term of the flow loss.
    pub lambda4: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Half-width of the uniform initialization range.
    pub init_scale: f64,
    /// Apply the flow loss per decoding step instead of to the
    /// step-averaged passage attention.
    pub flow_per_step: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 128,
            answer_pos_dim: 16,
            turn_dim: 16,
            chunk_dim: 16,
            hidden_dim: 256,
            chunks: 10,
            n_max: 20,
            vocab_size: 0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 0.5,
            dropout: 0.3,
            seed: 1,
            init_scale: 0.1,
            flow_per_step: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("answer_pos_dim", self.answer_pos_dim),
            ("turn_dim", self.turn_dim),
            ("chunk_dim", self.chunk_dim),
            ("hidden_dim", self.hidden_dim),
            ("chunks", self.chunks),
            ("n_max", self.n_max),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size < crate::corpus::vocab::RESERVED.len() {
            return Err(Error::Config(format!("vocab_size {} is smaller than the reserved symbols", self.vocab_size)));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3), ("lambda4", self.lambda4)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }

    /// Width of the passage encoder input `[w; a; t; c]`.
    pub fn passage_input_dim(&self) -> usize {
        self.word_dim + self.answer_pos_dim + self.turn_dim + self.chunk_dim
    }

    /// Width of bidirectional encoder states.
    pub fn memory_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// 1-based turn-embedding slot for a turn number.
    pub fn turn_slot(&self, turn_number: usize) -> usize {
        turn_number.clamp(1, self.n_max)
    }
}
