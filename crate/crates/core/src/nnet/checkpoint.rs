//! Versioned on-disk container for trained parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Parameters;
use crate::corpus::Vocabulary;
use crate::tensor::Tensor;
use crate::{io, Error, Result};

pub const CHECKPOINT_FORMAT: &str = "coqg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    /// Epoch the parameters were taken from, if produced by training.
    pub epoch: Option<usize>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(params: &Parameters, vocab_hash: impl Into<String>, epoch: Option<usize>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: params.config().clone(),
            vocab_hash: vocab_hash.into(),
            epoch,
            tensors: params
                .names()
                .iter()
                .zip(params.tensors())
                .map(|(name, tensor)| NamedTensor {
                    name: name.clone(),
                    tensor: tensor.clone(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = io::read_json(path)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint (format {:?})", path.display(), ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        Ok(ckpt)
    }

    /// Rebuilds parameters, refusing when the vocabulary differs from the
    /// one the checkpoint was trained with.
    pub fn restore(&self, vocab: &Vocabulary) -> Result<Parameters> {
        let hash = vocab.hash();
        if hash != self.vocab_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash {hash} does not match checkpoint vocabulary {}",
                self.vocab_hash
            )));
        }
        self.restore_unchecked()
    }

    /// Like [`Checkpoint::restore`] but additionally requires the stored
    /// configuration to equal `expected`.
    pub fn restore_with(&self, vocab: &Vocabulary, expected: &ModelConfig) -> Result<Parameters> {
        if &self.config != expected {
            return Err(Error::Checkpoint(format!(
                "configuration mismatch: checkpoint has {:?}, expected {:?}",
                self.config, expected
            )));
        }
        self.restore(vocab)
    }

    fn restore_unchecked(&self) -> Result<Parameters> {
        self.config.validate()?;
        let mut params = Parameters::init(&self.config);
        let named = self.tensors.iter().map(|t| (t.name.clone(), t.tensor.clone())).collect();
        params.load_tensors(named).map_err(Error::Checkpoint)?;
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(params)
    }
}
