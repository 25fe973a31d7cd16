//! Flat `key = value` configuration files.
//!
//! Keys mirror the [`ModelConfig`] field names, plus training, decoding and
//! preprocessing settings. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{BuildOptions, PipelineOptions};
use crate::decode::BeamConfig;
use crate::nnet::ModelConfig;
use crate::objectives::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub pipeline: PipelineOptions,
}

impl Default for Settings {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig {
            seed: model.seed,
            ..TrainConfig::default()
        };
        Settings {
            pipeline: PipelineOptions {
                build: BuildOptions {
                    chunks: model.chunks,
                    ..BuildOptions::default()
                },
                ..PipelineOptions::default()
            },
            model,
            train,
            beam: BeamConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {value:?} for {key}")))
}

pub const KEYS: &[&str] = &[
    "word_dim",
    "answer_pos_dim",
    "turn_dim",
    "chunk_dim",
    "hidden_dim",
    "chunks",
    "n_max",
    "vocab_size",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "dropout",
    "seed",
    "init_scale",
    "flow_per_step",
    "learning_rate",
    "epochs",
    "batch_size",
    "clip_norm",
    "beam_size",
    "max_len",
    "block_unigrams",
    "history_turns",
    "min_freq",
    "split_seed",
];

impl Settings {
    /// Sets one key. `seed` drives both initialization and training order;
    /// `chunks` sets both the model table and the preprocessing partition.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        match key {
            "word_dim" => m.word_dim = parse(key, value)?,
            "answer_pos_dim" => m.answer_pos_dim = parse(key, value)?,
            "turn_dim" => m.turn_dim = parse(key, value)?,
            "chunk_dim" => m.chunk_dim = parse(key, value)?,
            "hidden_dim" => m.hidden_dim = parse(key, value)?,
            "chunks" => {
                m.chunks = parse(key, value)?;
                self.pipeline.build.chunks = m.chunks;
            }
            "n_max" => m.n_max = parse(key, value)?,
            "vocab_size" => m.vocab_size = parse(key, value)?,
            "lambda1" => m.lambda1 = parse(key, value)?,
            "lambda2" => m.lambda2 = parse(key, value)?,
            "lambda3" => m.lambda3 = parse(key, value)?,
            "lambda4" => m.lambda4 = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "seed" => {
                m.seed = parse(key, value)?;
                self.train.seed = m.seed;
            }
            "init_scale" => m.init_scale = parse(key, value)?,
            "flow_per_step" => m.flow_per_step = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            "beam_size" => self.beam.beam_size = parse(key, value)?,
            "max_len" => self.beam.max_len = parse(key, value)?,
            "block_unigrams" => self.beam.block_unigrams = parse(key, value)?,
            "history_turns" => self.pipeline.build.history_turns = parse(key, value)?,
            "min_freq" => self.pipeline.min_freq = parse(key, value)?,
            "split_seed" => self.pipeline.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("{source}:{}: expected key = value", i + 1)));
            };
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        s.apply_text(text, "<config>")?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Settings::default();
        s.apply_text(&text, &path.display().to_string())?;
        Ok(s)
    }

    /// Checks everything except the vocabulary size, which is only known
    /// after preprocessing.
    pub fn validate(&self) -> Result<()> {
        let probe = ModelConfig {
            vocab_size: self.model.vocab_size.max(crate::corpus::vocab::RESERVED.len()),
            ..self.model.clone()
        };
        probe.validate()?;
        self.train.validate()?;
        if self.beam.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.pipeline.build.chunks != self.model.chunks {
            return Err(Error::Config("preprocessing and model chunk counts differ".into()));
        }
        Ok(())
    }

    /// Renders every key in file syntax.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("word_dim", m.word_dim.to_string());
        kv("answer_pos_dim", m.answer_pos_dim.to_string());
        kv("turn_dim", m.turn_dim.to_string());
        kv("chunk_dim", m.chunk_dim.to_string());
        kv("hidden_dim", m.hidden_dim.to_string());
        kv("chunks", m.chunks.to_string());
        kv("n_max", m.n_max.to_string());
        kv("vocab_size", m.vocab_size.to_string());
        kv("lambda1", m.lambda1.to_string());
        kv("lambda2", m.lambda2.to_string());
        kv("lambda3", m.lambda3.to_string());
        kv("lambda4", m.lambda4.to_string());
        kv("dropout", m.dropout.to_string());
        kv("seed", m.seed.to_string());
        kv("init_scale", m.init_scale.to_string());
        kv("flow_per_step", m.flow_per_step.to_string());
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("clip_norm", self.train.clip_norm.to_string());
        kv("beam_size", self.beam.beam_size.to_string());
        kv("max_len", self.beam.max_len.to_string());
        kv("block_unigrams", self.beam.block_unigrams.to_string());
        kv("history_turns", self.pipeline.build.history_turns.to_string());
        kv("min_freq", self.pipeline.min_freq.to_string());
        kv("split_seed", self.pipeline.seed.to_string());
        out
    }
}
