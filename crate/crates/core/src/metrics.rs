//! Automatic evaluation: corpus BLEU, ROUGE-L, pronoun P/R/F and
//! attention-mass diagnostics.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::coref::PRONOUNS;
use crate::corpus::{EvidenceLabel, ProcessedExample};
use crate::nnet::StepAttention;
use crate::{Error, Result};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-n with clipped n-gram counts, uniform weights up to
/// order `n` and the brevity penalty. No smoothing: an order without any
/// match yields 0.
pub fn bleu_n(candidates: &[Vec<String>], references: &[Vec<String>], n: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for k in 1..=n {
            let rc = ngram_counts(r, k);
            for (g, cnt) in ngram_counts(c, k) {
                matched[k - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
                total[k - 1] += cnt;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        if matched[k] == 0 {
            log::warn!("BLEU-{n}: no matching {}-grams in the corpus", k + 1);
            return Ok(0.0);
        }
        log_sum += (matched[k] as f64 / total[k] as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * (log_sum / n as f64).exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Recall weight of the LCS F-measure.
pub const ROUGE_BETA: f64 = 1.2;

/// Sentence-level ROUGE-L F-measure.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean sentence ROUGE-L over aligned pairs.
pub fn rouge_l_corpus(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract("candidate and reference counts differ".into()));
    }
    Ok(candidates.iter().zip(references).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / candidates.len() as f64)
}

/// Examples whose target pronoun is linked to a history mention.
pub fn coreference_subset(examples: &[ProcessedExample]) -> Vec<&ProcessedExample> {
    examples.iter().filter(|e| e.coref.is_some()).collect()
}

pub fn default_pronoun_lexicon() -> Vec<String> {
    PRONOUNS.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PronounScores {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    /// Candidates contained no pronoun at all; precision reported as 0.
    pub precision_undefined: bool,
    /// References contained no pronoun at all; recall reported as 0.
    pub recall_undefined: bool,
}

/// Micro-averaged pronoun precision/recall/F over per-question multiset
/// intersections.
pub fn pronoun_prf(candidates: &[Vec<String>], references: &[Vec<String>], lexicon: &[String]) -> Result<PronounScores> {
    if candidates.len() != references.len() {
        return Err(Error::Contract("candidate and reference counts differ".into()));
    }
    fn pronoun_bag<'a>(toks: &'a [String], lexicon: &[String]) -> HashMap<&'a str, usize> {
        let mut m: HashMap<&str, usize> = HashMap::new();
        for t in toks {
            if lexicon.iter().any(|p| p == t) {
                *m.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        m
    }
    let bag = |toks| pronoun_bag(toks, lexicon);
    let (mut inter, mut cand_total, mut ref_total) = (0usize, 0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let (cb, rb) = (bag(c), bag(r));
        cand_total += cb.values().sum::<usize>();
        ref_total += rb.values().sum::<usize>();
        inter += cb.iter().map(|(k, &v)| v.min(rb.get(k).copied().unwrap_or(0))).sum::<usize>();
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(inter, cand_total);
    let recall = ratio(inter, ref_total);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PronounScores {
        precision,
        recall,
        f,
        precision_undefined: cand_total == 0,
        recall_undefined: ref_total == 0,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionMass {
    pub ces_mass: f64,
    pub hes_mass: f64,
    pub examples: usize,
    /// Examples skipped because they had no CES token.
    pub excluded: usize,
}

/// Fractions of timestep-averaged passage attention on CES and HES tokens
/// for one example, or `None` without CES tokens or steps.
pub fn example_attention_mass(trace: &[StepAttention], evidence: &[EvidenceLabel]) -> Option<(f64, f64)> {
    if trace.is_empty() || !evidence.contains(&EvidenceLabel::CES) {
        return None;
    }
    let m = evidence.len();
    let mut mean = vec![0.0; m];
    for step in trace {
        for (acc, a) in mean.iter_mut().zip(&step.alpha) {
            *acc += a / trace.len() as f64;
        }
    }
    let total: f64 = mean.iter().sum();
    if total <= 0.0 {
        return Some((0.0, 0.0));
    }
    let mass = |label| {
        mean.iter()
            .zip(evidence)
            .filter(|(_, e)| **e == label)
            .map(|(a, _)| a)
            .sum::<f64>()
            / total
    };
    Some((mass(EvidenceLabel::CES), mass(EvidenceLabel::HES)))
}

/// Mean CES/HES attention fractions over a set of examples.
pub fn attention_mass(traces: &[Vec<StepAttention>], evidence: &[Vec<EvidenceLabel>]) -> Result<AttentionMass> {
    if traces.len() != evidence.len() {
        return Err(Error::Contract("trace and evidence counts differ".into()));
    }
    let mut out = AttentionMass::default();
    for (t, e) in traces.iter().zip(evidence) {
        match example_attention_mass(t, e) {
            Some((c, h)) => {
                out.ces_mass += c;
                out.hes_mass += h;
                out.examples += 1;
            }
            None => out.excluded += 1,
        }
    }
    if out.examples > 0 {
        out.ces_mass /= out.examples as f64;
        out.hes_mass /= out.examples as f64;
    }
    Ok(out)
}

/// One generated question aligned with its gold counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
    pub in_coref_subset: bool,
    pub attention: Option<Vec<StepAttention>>,
    pub evidence: Vec<EvidenceLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub rouge_l: f64,
    /// Pronoun scores over the coreference subset.
    pub pronoun_precision: f64,
    pub pronoun_recall: f64,
    pub pronoun_f: f64,
    pub pronoun_precision_undefined: bool,
    pub pronoun_recall_undefined: bool,
    pub ces_mass: Option<f64>,
    pub hes_mass: Option<f64>,
    pub examples: usize,
    pub coref_subset: usize,
    pub attention_examples: usize,
    pub attention_excluded: usize,
}

impl EvalReport {
    pub fn compute(items: &[EvalItem], lexicon: &[String]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let cands: Vec<Vec<String>> = items.iter().map(|i| i.candidate.clone()).collect();
        let refs: Vec<Vec<String>> = items.iter().map(|i| i.reference.clone()).collect();
        let subset: Vec<&EvalItem> = items.iter().filter(|i| i.in_coref_subset).collect();
        let sc: Vec<Vec<String>> = subset.iter().map(|i| i.candidate.clone()).collect();
        let sr: Vec<Vec<String>> = subset.iter().map(|i| i.reference.clone()).collect();
        let pron = pronoun_prf(&sc, &sr, lexicon)?;

        let traced: Vec<&EvalItem> = items.iter().filter(|i| i.attention.is_some()).collect();
        let mass = if traced.is_empty() {
            None
        } else {
            let traces: Vec<Vec<StepAttention>> = traced.iter().map(|i| i.attention.clone().unwrap_or_default()).collect();
            let ev: Vec<Vec<EvidenceLabel>> = traced.iter().map(|i| i.evidence.clone()).collect();
            Some(attention_mass(&traces, &ev)?)
        };
        Ok(EvalReport {
            bleu1: bleu_n(&cands, &refs, 1)?,
            bleu2: bleu_n(&cands, &refs, 2)?,
            bleu3: bleu_n(&cands, &refs, 3)?,
            rouge_l: rouge_l_corpus(&cands, &refs)?,
            pronoun_precision: pron.precision,
            pronoun_recall: pron.recall,
            pronoun_f: pron.f,
            pronoun_precision_undefined: pron.precision_undefined,
            pronoun_recall_undefined: pron.recall_undefined,
            ces_mass: mass.filter(|m| m.examples > 0).map(|m| m.ces_mass),
            hes_mass: mass.filter(|m| m.examples > 0).map(|m| m.hes_mass),
            examples: items.len(),
            coref_subset: subset.len(),
            attention_examples: mass.map_or(0, |m| m.examples),
            attention_excluded: mass.map_or(0, |m| m.excluded),
        })
    }

    fn values(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("BLEU-1", Some(self.bleu1)),
            ("BLEU-2", Some(self.bleu2)),
            ("BLEU-3", Some(self.bleu3)),
            ("ROUGE-L", Some(self.rouge_l)),
            ("Pronoun P", Some(self.pronoun_precision)),
            ("Pronoun R", Some(self.pronoun_recall)),
            ("Pronoun F", Some(self.pronoun_f)),
            ("CES mass", self.ces_mass),
            ("HES mass", self.hes_mass),
        ]
    }

    pub fn has_nan(&self) -> bool {
        self.values().iter().any(|(_, v)| v.is_some_and(f64::is_nan))
    }

    /// Human-readable table with scores scaled to percentages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8}", "metric", "score");
        for (name, v) in self.values() {
            match v {
                Some(v) if name.ends_with("mass") => {
                    let _ = writeln!(out, "{name:<12} {v:>8.4}");
                }
                Some(v) => {
                    let _ = writeln!(out, "{name:<12} {:>8.2}", 100.0 * v);
                }
                None => {
                    let _ = writeln!(out, "{name:<12} {:>8}", "n/a");
                }
            }
        }
        let _ = writeln!(out, "examples {} | coreference subset {} | attention traced {} (excluded {})", self.examples, self.coref_subset, self.attention_examples, self.attention_excluded);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub system_a: f64,
    pub system_b: f64,
    /// Fraction of resamples in which system A scored strictly higher.
    pub a_wins: f64,
    /// One-sided p-value for "A is not better than B".
    pub p_value: f64,
}

/// Paired bootstrap resampling of a corpus-level metric.
pub fn paired_bootstrap<F>(
    system_a: &[Vec<String>],
    system_b: &[Vec<String>],
    references: &[Vec<String>],
    metric: F,
    samples: usize,
    seed: u64,
) -> Result<BootstrapResult>
where
    F: Fn(&[Vec<String>], &[Vec<String>]) -> Result<f64>,
{
    let n = references.len();
    if n == 0 || samples == 0 {
        return Err(Error::Empty("bootstrap input"));
    }
    if system_a.len() != n || system_b.len() != n {
        return Err(Error::Contract("systems and references must be aligned".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    let (mut ra, mut rb, mut rr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..samples {
        ra.clear();
        rb.clear();
        rr.clear();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            ra.push(system_a[i].clone());
            rb.push(system_b[i].clone());
            rr.push(references[i].clone());
        }
        if metric(&ra, &rr)? > metric(&rb, &rr)? {
            wins += 1;
        }
    }
    let a_wins = wins as f64 / samples as f64;
    Ok(BootstrapResult {
        system_a: metric(system_a, references)?,
        system_b: metric(system_b, references)?,
        a_wins,
        p_value: 1.0 - a_wins,
    })
}
