//! CoQA JSON ingestion and the yes/no/unknown answer filter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Character range `[start, end)` into the passage text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTurn {
    pub turn_id: usize,
    pub question: String,
    pub answer: String,
    /// `None` where CoQA marks the rationale as absent (offsets of -1).
    pub rationale: Option<CharSpan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawConversation {
    pub id: String,
    pub passage_text: String,
    pub turns: Vec<RawTurn>,
}

impl RawConversation {
    /// Checks that turn ids run 1, 2, 3, ... and that every rationale lies
    /// inside the passage.
    pub fn validate(&self) -> Result<()> {
        let passage_len = self.passage_text.chars().count();
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.turn_id != i + 1 {
                return Err(Error::Validation {
                    record: self.id.clone(),
                    message: format!("turn ids must be consecutive from 1; position {} has turn_id {}", i + 1, turn.turn_id),
                });
            }
            if let Some(r) = turn.rationale {
                if r.start > r.end || r.end > passage_len {
                    return Err(Error::Validation {
                        record: self.id.clone(),
                        message: format!(
                            "turn {} rationale [{}, {}) outside passage of {} chars",
                            turn.turn_id, r.start, r.end, passage_len
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct CoqaQuestion {
    input_text: String,
    turn_id: usize,
}

#[derive(Deserialize)]
struct CoqaAnswer {
    span_start: i64,
    span_end: i64,
    input_text: String,
    turn_id: usize,
}

#[derive(Deserialize)]
struct CoqaStory {
    #[serde(default)]
    id: Option<String>,
    story: String,
    questions: Vec<CoqaQuestion>,
    answers: Vec<CoqaAnswer>,
}

/// Reads a CoQA file (top-level `"data"` array of stories).
pub fn load_coqa(path: &Path) -> Result<Vec<RawConversation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coqa(&text, &path.display().to_string())
}

pub fn parse_coqa(text: &str, source: &str) -> Result<Vec<RawConversation>> {
    let root: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        record: source.to_string(),
        message: e.to_string(),
    })?;
    let data = root.get("data").and_then(|d| d.as_array()).ok_or_else(|| Error::Parse {
        record: source.to_string(),
        message: "missing top-level \"data\" array".into(),
    })?;
    data.iter()
        .enumerate()
        .map(|(i, item)| {
            let fallback = format!("data[{i}]");
            let record = item
                .get("id")
                .and_then(|v| v.as_str())
                .map_or_else(|| fallback.clone(), |id| format!("{fallback} (id {id})"));
            let story: CoqaStory = serde_json::from_value(item.clone()).map_err(|e| Error::Parse {
                record: record.clone(),
                message: e.to_string(),
            })?;
            convert(story, fallback, record)
        })
        .collect()
}

fn convert(story: CoqaStory, fallback_id: String, record: String) -> Result<RawConversation> {
    if story.questions.len() != story.answers.len() {
        return Err(Error::Validation {
            record,
            message: format!("{} questions but {} answers", story.questions.len(), story.answers.len()),
        });
    }
    let mut questions = story.questions;
    let mut answers = story.answers;
    questions.sort_by_key(|q| q.turn_id);
    answers.sort_by_key(|a| a.turn_id);
    let turns = questions
        .into_iter()
        .zip(answers)
        .map(|(q, a)| {
            if q.turn_id != a.turn_id {
                return Err(Error::Validation {
                    record: record.clone(),
                    message: format!("question turn {} has no matching answer", q.turn_id),
                });
            }
            let rationale = if a.span_start < 0 || a.span_end < 0 {
                None
            } else {
                Some(CharSpan {
                    start: a.span_start as usize,
                    end: a.span_end as usize,
                })
            };
            Ok(RawTurn {
                turn_id: q.turn_id,
                question: q.input_text,
                answer: a.input_text,
                rationale,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let conv = RawConversation {
        id: story.id.unwrap_or(fallback_id),
        passage_text: story.story,
        turns,
    };
    conv.validate().map_err(|e| match e {
        Error::Validation { message, .. } => Error::Validation { record, message },
        other => other,
    })?;
    Ok(conv)
}

/// Lowercases and strips non-alphanumeric characters from both ends.
pub fn normalize_answer(answer: &str) -> String {
    answer
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// True for answers carrying too little content to generate a question from.
pub fn is_uninformative_answer(answer: &str) -> bool {
    matches!(normalize_answer(answer).as_str(), "yes" | "no" | "unknown")
}

/// Drops turns whose answer is yes/no/unknown. Remaining turns keep their ids.
pub fn filter_turns(conv: &RawConversation) -> RawConversation {
    RawConversation {
        id: conv.id.clone(),
        passage_text: conv.passage_text.clone(),
        turns: conv
            .turns
            .iter()
            .filter(|t| !is_uninformative_answer(&t.answer))
            .cloned()
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn story(turn_ids: &[usize]) -> String {
        let qs: Vec<_> = turn_ids
            .iter()
            .map(|t| format!(r#"{{"input_text": "q{t}?", "turn_id": {t}}}"#))
            .collect();
        let as_: Vec<_> = turn_ids
            .iter()
            .map(|t| format!(r#"{{"span_start": 0, "span_end": 3, "span_text": "abc", "input_text": "a{t}", "turn_id": {t}}}"#))
            .collect();
        format!(
            r#"{{"version": "1.0", "data": [{{"id": "s1", "story": "abc def.", "questions": [{}], "answers": [{}]}}]}}"#,
            qs.join(","),
            as_.join(",")
        )
    }

    #[test]
    fn one_story_three_turns() {
        let convs = parse_coqa(&story(&[1, 2, 3]), "mem").unwrap();
        assert_eq!(convs.len(), 1);
        assert_eq!(convs[0].id, "s1");
        assert_eq!(convs[0].turns.len(), 3);
        assert_eq!(convs[0].turns[2].question, "q3?");
        assert_eq!(convs[0].turns[0].rationale, Some(CharSpan { start: 0, end: 3 }));
    }

    #[test]
    fn gap_in_turn_ids_is_rejected() {
        let err = parse_coqa(&story(&[1, 3]), "mem").unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn mismatched_counts_are_rejected() {
        let text = r#"{"data": [{"id": "x", "story": "s", "questions": [{"input_text": "q", "turn_id": 1}], "answers": []}]}"#;
        assert!(matches!(parse_coqa(text, "mem").unwrap_err(), Error::Validation { .. }));
    }

    #[test]
    fn malformed_record_is_named() {
        let text = r#"{"data": [{"id": "bad-one", "story": 5, "questions": [], "answers": []}]}"#;
        match parse_coqa(text, "mem").unwrap_err() {
            Error::Parse { record, .. } => assert!(record.contains("bad-one"), "{record}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_bounds_rationale_is_rejected() {
        let text = r#"{"data": [{"id": "x", "story": "ab", "questions": [{"input_text": "q", "turn_id": 1}],
            "answers": [{"span_start": 0, "span_end": 9, "input_text": "a", "turn_id": 1}]}]}"#;
        assert!(matches!(parse_coqa(text, "mem").unwrap_err(), Error::Validation { .. }));
    }

    #[test]
    fn filter_normalizes_before_matching() {
        assert!(is_uninformative_answer("No."));
        assert!(is_uninformative_answer("  YES! "));
        assert!(is_uninformative_answer("unknown"));
        assert!(!is_uninformative_answer("third term"));
        assert!(!is_uninformative_answer("no one"));
    }

    #[test]
    fn filter_keeps_turn_ids_and_is_idempotent() {
        let mut conv = parse_coqa(&story(&[1, 2, 3]), "mem").unwrap().remove(0);
        conv.turns[1].answer = "No.".into();
        let once = filter_turns(&conv);
        assert_eq!(once.turns.iter().map(|t| t.turn_id).collect::<Vec<_>>(), [1, 3]);
        assert_eq!(filter_turns(&once), once);
    }
}
