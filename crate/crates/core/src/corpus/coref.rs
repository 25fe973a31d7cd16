//! Coreference annotation: links a pronoun in the target question to a
//! non-pronominal mention inside the history window.
//!
//! Two sources ship: precomputed cluster annotations read from JSONL, and a
//! lexicon-driven fallback that picks the nearest preceding compatible
//! mention.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::coqa::RawConversation;
use super::example::ProcessedExample;
use super::tokenize::{BasicTokenizer, Token, Tokenizer};
use super::vocab::{A_MARK, Q_MARK};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorefAnnotation {
    /// Positions of the mention tokens in the flattened history.
    pub mention_positions: Vec<usize>,
    /// Position of the pronoun in the target question.
    pub pronoun: usize,
    /// Resolver confidence `s_c`, in `(0, 1]`.
    pub confidence: f64,
}

pub const PRONOUNS: &[&str] = &["he", "him", "his", "she", "her", "hers", "it", "its", "they", "them", "their", "theirs"];

pub fn is_pronoun(token: &str) -> bool {
    PRONOUNS.contains(&token)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Agreement {
    Male,
    Female,
    Neuter,
    Plural,
}

pub fn pronoun_agreement(token: &str) -> Option<Agreement> {
    Some(match token {
        "he" | "him" | "his" => Agreement::Male,
        "she" | "her" | "hers" => Agreement::Female,
        "it" | "its" => Agreement::Neuter,
        "they" | "them" | "their" | "theirs" => Agreement::Plural,
        _ => return None,
    })
}

pub const MALE_NOUNS: &[&str] = &[
    "man", "boy", "father", "dad", "brother", "son", "king", "husband", "uncle", "grandfather", "grandpa", "prince",
    "gentleman", "nephew", "mr", "sir", "lord", "duke", "monk", "priest", "boyfriend", "actor", "waiter",
];

pub const FEMALE_NOUNS: &[&str] = &[
    "woman", "girl", "mother", "mom", "sister", "daughter", "queen", "wife", "aunt", "grandmother", "grandma",
    "princess", "lady", "niece", "mrs", "ms", "miss", "madam", "nun", "girlfriend", "actress", "waitress",
];

pub const PLURAL_NOUNS: &[&str] = &[
    "people", "children", "kids", "men", "women", "parents", "friends", "students", "players", "boys", "girls",
    "brothers", "sisters", "family", "families", "soldiers", "workers", "teams", "officials", "fans",
];

pub const MALE_NAMES: &[&str] = &[
    "john", "james", "robert", "michael", "william", "david", "richard", "joseph", "thomas", "charles", "daniel",
    "matthew", "anthony", "mark", "paul", "steven", "andrew", "joshua", "kevin", "brian", "george", "edward",
    "peter", "jack", "harry", "henry", "sam", "tom", "bill", "bob", "jim", "joe", "max", "leo", "oscar", "ben",
    "carl", "frank", "fred", "greg", "hank", "ivan", "kyle", "luke", "nick", "omar", "ray", "ted", "victor", "walter",
];

pub const FEMALE_NAMES: &[&str] = &[
    "mary", "patricia", "jennifer", "linda", "elizabeth", "barbara", "susan", "jessica", "sarah", "karen", "nancy",
    "lisa", "betty", "margaret", "sandra", "ashley", "emily", "donna", "michelle", "carol", "amanda", "melissa",
    "anna", "emma", "olivia", "sophia", "grace", "alice", "jane", "kate", "lucy", "rose", "ruth", "amy", "beth",
    "clara", "diana", "ella", "fiona", "helen", "irene", "julia", "laura", "maria", "nina", "paula", "rita", "tina",
    "vera", "wendy",
];

const NOT_MENTIONS: &[&str] = &[
    "what", "who", "whom", "whose", "which", "when", "where", "why", "how", "did", "does", "do", "is", "was", "were",
    "are", "the", "a", "an", "and", "or", "but", "of", "in", "on", "at", "to", "for", "with", "by", "from", "i", "yes",
    "no", "unknown", "in", "after", "before", "then", "so", "if", "because", "this", "that", "these", "those",
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "january", "february", "march",
    "april", "may", "june", "july", "august", "september", "october", "november", "december",
];

const ADJECTIVAL_SUFFIXES: &[&str] = &["ic", "ican", "ian", "ese", "ish"];

pub trait CorefProvider: Send + Sync {
    fn link(&self, example: &ProcessedExample, conv: &RawConversation) -> Option<CorefAnnotation>;

    /// Annotations dropped because they pointed outside the history window
    /// or at a non-pronoun.
    fn dropped(&self) -> usize {
        0
    }
}

/// Runs `provider` and re-validates what it returns against the example.
pub fn annotate_coreference(
    example: &ProcessedExample,
    conv: &RawConversation,
    provider: &dyn CorefProvider,
) -> Option<CorefAnnotation> {
    let ann = provider.link(example, conv)?;
    validate(example, &ann).then_some(ann)
}

fn validate(example: &ProcessedExample, ann: &CorefAnnotation) -> bool {
    let hist = example.history_len();
    !ann.mention_positions.is_empty()
        && ann.mention_positions.iter().all(|&p| p < hist)
        && example.target_question.get(ann.pronoun).is_some_and(|t| is_pronoun(t))
        && ann.confidence > 0.0
        && ann.confidence <= 1.0
}

#[derive(Clone, Debug, PartialEq)]
struct Mention {
    positions: Vec<usize>,
    agreement: Option<Agreement>,
}

impl Mention {
    fn compatible(&self, pronoun: Agreement) -> bool {
        match self.agreement {
            Some(a) => a == pronoun,
            // proper noun of unknown gender
            None => pronoun != Agreement::Plural,
        }
    }
}

/// Nearest preceding history mention with matching number/gender, with
/// confidence 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicProvider;

impl HeuristicProvider {
    fn mentions(history: &[Token]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < history.len() {
            let t = &history[i];
            let lower = t.text.as_str();
            if let Some(agreement) = lexicon_agreement(lower) {
                out.push(Mention {
                    positions: vec![i],
                    agreement: Some(agreement),
                });
                i += 1;
                continue;
            }
            if is_capitalized(t) && !NOT_MENTIONS.contains(&lower) && !is_pronoun(lower) {
                let start = i;
                while i + 1 < history.len() && is_capitalized(&history[i + 1]) && !NOT_MENTIONS.contains(&history[i + 1].text.as_str()) {
                    i += 1;
                }
                let run = &history[start..=i];
                let last = run.last().map(|t| t.text.as_str()).unwrap_or("");
                let adjectival = run.len() == 1 && ADJECTIVAL_SUFFIXES.iter().any(|s| last.ends_with(s));
                if !adjectival {
                    let agreement = if run.iter().any(|t| MALE_NAMES.contains(&t.text.as_str())) {
                        Some(Agreement::Male)
                    } else if run.iter().any(|t| FEMALE_NAMES.contains(&t.text.as_str())) {
                        Some(Agreement::Female)
                    } else if last.ends_with('s') && last.len() > 3 && !last.ends_with("ss") {
                        Some(Agreement::Plural)
                    } else {
                        None
                    };
                    out.push(Mention {
                        positions: (start..=i).collect(),
                        agreement,
                    });
                }
            }
            i += 1;
        }
        out
    }
}

fn lexicon_agreement(lower: &str) -> Option<Agreement> {
    if MALE_NOUNS.contains(&lower) {
        Some(Agreement::Male)
    } else if FEMALE_NOUNS.contains(&lower) {
        Some(Agreement::Female)
    } else if PLURAL_NOUNS.contains(&lower) {
        Some(Agreement::Plural)
    } else {
        None
    }
}

fn is_capitalized(t: &Token) -> bool {
    t.raw.chars().next().is_some_and(char::is_uppercase)
}

/// Cased tokens of the history window in the same order as
/// [`ProcessedExample::flat_history`].
fn cased_history(example: &ProcessedExample, conv: &RawConversation) -> Option<Vec<Token>> {
    let target_idx = conv.turns.iter().position(|t| t.turn_id == example.turn_number)?;
    let first = target_idx.checked_sub(example.history.len())?;
    let marker = |m: &str| Token {
        text: m.into(),
        raw: m.into(),
        start: 0,
        end: 0,
    };
    let mut out = Vec::new();
    for turn in &conv.turns[first..target_idx] {
        out.push(marker(Q_MARK));
        out.extend(BasicTokenizer.tokenize(&turn.question));
        out.push(marker(A_MARK));
        out.extend(BasicTokenizer.tokenize(&turn.answer));
    }
    (out.len() == example.history_len()).then_some(out)
}

impl CorefProvider for HeuristicProvider {
    fn link(&self, example: &ProcessedExample, conv: &RawConversation) -> Option<CorefAnnotation> {
        if example.history.is_empty() {
            return None;
        }
        let history = cased_history(example, conv)?;
        let mentions = Self::mentions(&history);
        example.target_question.iter().enumerate().find_map(|(pos, tok)| {
            let agreement = pronoun_agreement(tok)?;
            let m = mentions.iter().rev().find(|m| m.compatible(agreement))?;
            Some(CorefAnnotation {
                mention_positions: m.positions.clone(),
                pronoun: pos,
                confidence: 1.0,
            })
        })
    }
}

/// One line of a precomputed annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorefRecord {
    pub conversation_id: String,
    pub turn_id: usize,
    pub mention_positions: Vec<usize>,
    pub pronoun_index: usize,
    pub confidence: f64,
}

/// Annotations from an external resolver, keyed by conversation and turn.
#[derive(Debug, Default)]
pub struct FileProvider {
    records: HashMap<(String, usize), CorefRecord>,
    dropped: AtomicUsize,
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let records: Vec<CorefRecord> = crate::io::read_jsonl(path)?;
        Ok(Self::from_records(records))
    }

    pub fn from_records(records: impl IntoIterator<Item = CorefRecord>) -> Self {
        FileProvider {
            records: records
                .into_iter()
                .map(|r| ((r.conversation_id.clone(), r.turn_id), r))
                .collect(),
            dropped: AtomicUsize::new(0),
        }
    }
}

impl CorefProvider for FileProvider {
    fn link(&self, example: &ProcessedExample, _conv: &RawConversation) -> Option<CorefAnnotation> {
        let rec = self.records.get(&(example.conversation_id.clone(), example.turn_number))?;
        if !rec.confidence.is_finite() || rec.confidence <= 0.0 {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        let ann = CorefAnnotation {
            mention_positions: rec.mention_positions.clone(),
            pronoun: rec.pronoun_index,
            confidence: rec.confidence.min(1.0),
        };
        if validate(example, &ann) {
            Some(ann)
        } else {
            log::warn!(
                "dropping coreference annotation for {} turn {}: outside history window or not a pronoun",
                rec.conversation_id,
                rec.turn_id
            );
            self.dropped.fetch_add(1, Ordering::Relaxed);
            None
        }
    }

    fn dropped(&self) -> usize {
        self.dropped.load(Ordering::Relaxed)
    }
}
