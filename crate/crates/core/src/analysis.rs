//! Chunk-level conversation flow: where in the passage each stage of a
//! conversation looks.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize::char_range_to_tokens;
use crate::corpus::{BasicTokenizer, RawConversation, Tokenizer};
use crate::{Error, Result};

/// Row-stochastic turn-chunk x passage-chunk matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowHeatmap {
    pub chunks: usize,
    /// `matrix[r][c]`: share of turn-chunk `r` rationale tokens in passage
    /// chunk `c`, averaged over conversations with mass in row `r`.
    pub matrix: Vec<Vec<f64>>,
    /// Conversations contributing to each row.
    pub row_support: Vec<usize>,
    pub conversations: usize,
}

/// Per-conversation row-normalized counts; rows without rationale tokens
/// are `None`.
fn conversation_rows(conv: &RawConversation, chunks: usize, tokenizer: &dyn Tokenizer) -> Vec<Option<Vec<f64>>> {
    let tokens = tokenizer.tokenize(&conv.passage_text);
    let m = tokens.len();
    let t_count = conv.turns.len();
    let mut counts = vec![vec![0.0; chunks]; chunks];
    if m == 0 || t_count == 0 {
        return vec![None; chunks];
    }
    for (t, turn) in conv.turns.iter().enumerate() {
        let Some(r) = turn.rationale else { continue };
        let Some(span) = char_range_to_tokens(&tokens, r.start, r.end) else { continue };
        let row = t * chunks / t_count;
        for j in span.start..=span.end {
            counts[row][j * chunks / m] += 1.0;
        }
    }
    counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            (total > 0.0).then(|| row.iter().map(|x| x / total).collect())
        })
        .collect()
}

pub fn flow_heatmap(conversations: &[RawConversation], chunks: usize) -> Result<FlowHeatmap> {
    flow_heatmap_with(conversations, chunks, &BasicTokenizer)
}

pub fn flow_heatmap_with(conversations: &[RawConversation], chunks: usize, tokenizer: &dyn Tokenizer) -> Result<FlowHeatmap> {
    if chunks == 0 {
        return Err(Error::Config("chunk count must be at least 1".into()));
    }
    let per_conv: Vec<Vec<Option<Vec<f64>>>> = conversations
        .par_iter()
        .map(|c| conversation_rows(c, chunks, tokenizer))
        .collect();
    let mut matrix = vec![vec![0.0; chunks]; chunks];
    let mut row_support = vec![0usize; chunks];
    for rows in &per_conv {
        for (r, row) in rows.iter().enumerate() {
            if let Some(row) = row {
                row_support[r] += 1;
                for (acc, x) in matrix[r].iter_mut().zip(row) {
                    *acc += x;
                }
            }
        }
    }
    for (row, &n) in matrix.iter_mut().zip(&row_support) {
        if n > 0 {
            row.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    Ok(FlowHeatmap {
        chunks,
        matrix,
        row_support,
        conversations: conversations.len(),
    })
}

impl FlowHeatmap {
    /// Expected passage-chunk index of each turn-chunk row.
    pub fn mean_passage_chunk(&self) -> Vec<Option<f64>> {
        self.matrix
            .iter()
            .zip(&self.row_support)
            .map(|(row, &n)| (n > 0).then(|| row.iter().enumerate().map(|(c, x)| c as f64 * x).sum()))
            .collect()
    }

    pub fn summary(&self) -> FlowSummary {
        let means = self.mean_passage_chunk();
        let present: Vec<(f64, f64)> = means.iter().enumerate().filter_map(|(r, m)| m.map(|m| (r as f64, m))).collect();
        let xs: Vec<f64> = present.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = present.iter().map(|p| p.1).collect();
        let pairs = present.windows(2);
        let increasing_pairs = pairs.clone().filter(|w| w[1].1 > w[0].1).count();
        FlowSummary {
            chunks: self.chunks,
            conversations: self.conversations,
            mean_passage_chunk: means,
            spearman: spearman(&xs, &ys),
            increasing_pairs,
            compared_pairs: present.len().saturating_sub(1),
            non_decreasing: pairs.clone().all(|w| w[1].1 >= w[0].1),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("turn_chunk");
        for c in 0..self.chunks {
            let _ = write!(out, ",passage_chunk_{c}");
        }
        out.push('\n');
        for (r, row) in self.matrix.iter().enumerate() {
            let _ = write!(out, "{r}");
            for x in row {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub chunks: usize,
    pub conversations: usize,
    pub mean_passage_chunk: Vec<Option<f64>>,
    /// Rank correlation of turn-chunk index against mean passage chunk.
    pub spearman: Option<f64>,
    pub increasing_pairs: usize,
    pub compared_pairs: usize,
    pub non_decreasing: bool,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant series.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CharSpan, RawTurn};

    fn conv(passage: &str, rationales: &[(usize, usize)]) -> RawConversation {
        RawConversation {
            id: "c".into(),
            passage_text: passage.into(),
            turns: rationales
                .iter()
                .enumerate()
                .map(|(i, &(start, end))| RawTurn {
                    turn_id: i + 1,
                    question: "q".into(),
                    answer: "a".into(),
                    rationale: Some(CharSpan { start, end }),
                })
                .collect(),
        }
    }

    #[test]
    fn diagonal_rationales_give_identity() {
        // ten one-character words, turn t points at word t
        let passage = "a b c d e f g h i j";
        let rationales: Vec<(usize, usize)> = (0..10).map(|t| (2 * t, 2 * t + 1)).collect();
        let h = flow_heatmap(&[conv(passage, &rationales)], 10).unwrap();
        for (r, row) in h.matrix.iter().enumerate() {
            for (c, &x) in row.iter().enumerate() {
                assert_eq!(x, if r == c { 1.0 } else { 0.0 });
            }
        }
        let s = h.summary();
        assert_eq!(s.spearman, Some(1.0));
        assert_eq!(s.increasing_pairs, 9);
    }

    #[test]
    fn rationale_straddling_two_chunks_splits_evenly() {
        let passage = "a b c d e f g h i j k l m n o p q r s t";
        // words 1 and 2 -> chunks 0 and 1 with 20 tokens over 10 chunks
        let h = flow_heatmap(&[conv(passage, &[(2, 5)])], 10).unwrap();
        assert_eq!(&h.matrix[0][..3], &[0.5, 0.5, 0.0]);
        assert_eq!(h.row_support[0], 1);
    }

    #[test]
    fn spearman_handles_ties_and_degenerate_input() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }
}
