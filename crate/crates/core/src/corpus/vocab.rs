//! Token vocabulary with fixed reserved symbols.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::example::ProcessedExample;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const Q: usize = 4;
pub const A: usize = 5;

pub const Q_MARK: &str = "<q>";
pub const A_MARK: &str = "<a>";
pub const RESERVED: [&str; 6] = ["<pad>", "<unk>", "<s>", "</s>", Q_MARK, A_MARK];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_freq: usize,
    tokens: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_tokens(f.tokens, f.min_freq)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            min_freq: v.min_freq,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// Builds from an ordered token list; reserved symbols are forced into
    /// their fixed slots.
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().filter(|t| !RESERVED.contains(&t.as_str())));
        let mut index = HashMap::with_capacity(all.len());
        all.retain(|t| {
            let next = index.len();
            match index.entry(t.clone()) {
                std::collections::hash_map::Entry::Occupied(_) => false,
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(next);
                    true
                }
            }
        });
        Vocabulary {
            tokens: all,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Tokens from passages, target questions and history with frequency at
/// least `min_freq`, most frequent first (ties alphabetical).
pub fn build_vocabulary(examples: &[ProcessedExample], min_freq: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    // passages are shared across the turns of a conversation; count each once
    let mut seen_passages = std::collections::HashSet::new();
    for ex in examples {
        if seen_passages.insert(ex.conversation_id.as_str()) {
            for t in &ex.passage_tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        for t in ex.target_question.iter().chain(ex.history.iter().flatten()) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_lowercase()).collect(), min_freq)
}
