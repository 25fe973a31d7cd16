//! Metric properties checked against naive reimplementations.

use coqg_core::corpus::EvidenceLabel;
use coqg_core::metrics::{
    attention_mass, bleu_n, default_pronoun_lexicon, lcs_len, paired_bootstrap, pronoun_prf, rouge_l, EvalItem, EvalReport, ROUGE_BETA,
};
use coqg_core::nnet::StepAttention;
use proptest::prelude::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Corpus BLEU by direct counting with no hashing.
fn naive_bleu(cands: &[Vec<String>], refs: &[Vec<String>], n: usize) -> f64 {
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in cands.iter().zip(refs) {
            if c.len() < order {
                continue;
            }
            let cg: Vec<&[String]> = c.windows(order).collect();
            let rg: Vec<&[String]> = if r.len() >= order { r.windows(order).collect() } else { vec![] };
            total += cg.len();
            let mut distinct: Vec<&[String]> = cg.clone();
            distinct.sort();
            distinct.dedup();
            for g in distinct {
                let in_c = cg.iter().filter(|x| **x == g).count();
                let in_r = rg.iter().filter(|x| **x == g).count();
                matched += in_c.min(in_r);
            }
        }
        if matched == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln() / n as f64;
    }
    let c: usize = cands.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

/// Longest common subsequence by enumerating subsequences of `a`.
fn naive_lcs(a: &[String], b: &[String]) -> usize {
    let is_subseq = |sub: &[&String]| {
        let mut it = b.iter();
        sub.iter().all(|x| it.any(|y| y == *x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() > best && is_subseq(&sub) {
            best = sub.len();
        }
    }
    best
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "he", "she", "it"]), 1..9)
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

fn corpus() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
    (1usize..6).prop_flat_map(|n| (prop::collection::vec(sentence(), n), prop::collection::vec(sentence(), n)))
}

#[test]
fn hand_computed_examples() {
    let b1 = bleu_n(&[toks("what was he")], &[toks("what was he ineligible")], 1).unwrap();
    assert!((b1 - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12 && (b1 - 0.7165).abs() < 1e-4);
    let r = rouge_l(&toks("a b c"), &toks("a c d"));
    assert!((r - 0.6667).abs() < 1e-4);
}

proptest! {
    #[test]
    fn bleu_matches_naive_counting((c, r) in corpus(), n in 1usize..4) {
        let got = bleu_n(&c, &r, n).unwrap();
        prop_assert!((got - naive_bleu(&c, &r, n)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn bleu_identity_permutation_and_monotonicity((c, r) in corpus(), n in 1usize..4, extra in sentence()) {
        prop_assert!((bleu_n(&c, &c, 1).unwrap() - 1.0).abs() < 1e-12);
        let base = bleu_n(&c, &r, n).unwrap();
        let (mut cr, mut rr) = (c.clone(), r.clone());
        cr.reverse();
        rr.reverse();
        prop_assert!((bleu_n(&cr, &rr, n).unwrap() - base).abs() < 1e-12);
        let (mut ca, mut ra) = (c.clone(), r.clone());
        ca.push(extra.clone());
        ra.push(extra);
        prop_assert!(bleu_n(&ca, &ra, n).unwrap() >= base - 1e-12);
    }

    #[test]
    fn rouge_matches_naive_lcs(c in sentence(), r in sentence()) {
        let l = naive_lcs(&c, &r);
        prop_assert_eq!(lcs_len(&c, &r), l);
        let expected = if l == 0 {
            0.0
        } else {
            let p = l as f64 / c.len() as f64;
            let rec = l as f64 / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        };
        prop_assert!((rouge_l(&c, &r) - expected).abs() < 1e-12);
        prop_assert!((rouge_l(&c, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pronoun_scores_are_symmetric_and_bounded((c, r) in corpus()) {
        let lex = default_pronoun_lexicon();
        let fwd = pronoun_prf(&c, &r, &lex).unwrap();
        let back = pronoun_prf(&r, &c, &lex).unwrap();
        prop_assert!((fwd.precision - back.recall).abs() < 1e-12);
        prop_assert!((fwd.recall - back.precision).abs() < 1e-12);
        for v in [fwd.precision, fwd.recall, fwd.f] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let h = if fwd.precision + fwd.recall > 0.0 { 2.0 * fwd.precision * fwd.recall / (fwd.precision + fwd.recall) } else { 0.0 };
        prop_assert!((fwd.f - h).abs() < 1e-9);
    }

    #[test]
    fn evidence_masses_never_exceed_one(
        raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..5),
        labels in prop::collection::vec(0usize..3, 6),
    ) {
        let ev: Vec<EvidenceLabel> = labels.iter().map(|&l| [EvidenceLabel::CES, EvidenceLabel::HES, EvidenceLabel::NONE][l]).collect();
        let trace: Vec<StepAttention> = raw.into_iter().map(|alpha| StepAttention { alpha, beta: vec![vec![0.1]], p_gen: 0.5 }).collect();
        let m = attention_mass(&[trace], &[ev]).unwrap();
        prop_assert!(m.ces_mass + m.hes_mass <= 1.0 + 1e-12);
        prop_assert!(m.ces_mass >= 0.0 && m.hes_mass >= 0.0);
    }
}

#[test]
fn pronoun_extremes() {
    let lex = default_pronoun_lexicon();
    let same = pronoun_prf(&[toks("did he see her")], &[toks("did he see her")], &lex).unwrap();
    assert_eq!((same.precision, same.recall, same.f), (1.0, 1.0, 1.0));
    let disjoint = pronoun_prf(&[toks("did she see them")], &[toks("did he see it")], &lex).unwrap();
    assert_eq!((disjoint.precision, disjoint.recall, disjoint.f), (0.0, 0.0, 0.0));
}

#[test]
fn gold_self_evaluation_is_perfect() {
    let qs = ["what did he buy", "where was she", "when did it happen"];
    let items: Vec<EvalItem> = qs
        .iter()
        .enumerate()
        .map(|(i, q)| EvalItem {
            candidate: toks(q),
            reference: toks(q),
            in_coref_subset: i < 2,
            attention: None,
            evidence: vec![],
        })
        .collect();
    let r = EvalReport::compute(&items, &default_pronoun_lexicon()).unwrap();
    assert_eq!((r.bleu1, r.bleu2, r.bleu3, r.rouge_l), (1.0, 1.0, 1.0, 1.0));
    assert_eq!((r.pronoun_f, r.coref_subset, r.examples), (1.0, 2, 3));
    assert_eq!(r.ces_mass, None);
    assert!(!r.has_nan());
}

#[test]
fn bootstrap_is_seeded_and_prefers_the_better_system() {
    let refs: Vec<Vec<String>> = (0..30).map(|i| toks(&format!("what did person{i} see there"))).collect();
    let good = refs.clone();
    let bad: Vec<Vec<String>> = refs.iter().map(|r| r[..2].to_vec()).collect();
    let metric = |c: &[Vec<String>], r: &[Vec<String>]| bleu_n(c, r, 2);
    let a = paired_bootstrap(&good, &bad, &refs, metric, 200, 5).unwrap();
    assert_eq!(a, paired_bootstrap(&good, &bad, &refs, metric, 200, 5).unwrap());
    assert!(a.system_a > a.system_b && a.a_wins > 0.99 && a.p_value < 0.05);
}
