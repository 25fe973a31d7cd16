//! Loss properties and training-loop behavior.

mod common;

use coqg_core::corpus::coref::CorefAnnotation;
use coqg_core::corpus::EvidenceLabel;
use coqg_core::graph::Graph;
use coqg_core::nnet::{Checkpoint, ModelConfig, Mode, Parameters};
use coqg_core::objectives::{
    coref_loss, evaluate_loss, flow_loss, joint_loss, nll_loss, sgd_update, train, Objective, TrainConfig, TrainRun, Trainer,
};
use coqg_core::tensor::Tensor;
use coqg_core::Error;
use proptest::prelude::*;

fn row(g: &mut Graph, xs: &[f64]) -> coqg_core::graph::Var {
    g.input(Tensor::row_vector(xs.to_vec()))
}

/// Value of the coreference loss for a two-position history whose first
/// position is the mention.
fn coref_value(mention: f64, other: f64, p: f64, l1: f64, l2: f64, s: f64) -> f64 {
    let mut g = Graph::new(&[]);
    let att = row(&mut g, &[0.3, mention, other]);
    let dist = row(&mut g, &[p, 1.0 - p]);
    let ann = CorefAnnotation {
        mention_positions: vec![0],
        pronoun: 0,
        confidence: s,
    };
    let l = coref_loss(&mut g, &[att], &[dist], &[0], 1, &ann, l1, l2).unwrap();
    g.value(l).item()
}

fn flow_value(alpha: &[f64], evidence: &[EvidenceLabel], l3: f64, l4: f64) -> f64 {
    let mut g = Graph::new(&[]);
    let att = row(&mut g, alpha);
    let l = flow_loss(&mut g, &[att], evidence, l3, l4, false).unwrap().unwrap();
    g.value(l).item()
}

#[test]
fn nll_matches_scalar_loop() {
    let mut rng = common::rng(3);
    use rand::Rng;
    for _ in 0..20 {
        let dists: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let targets: Vec<usize> = (0..3).map(|_| rng.random_range(0..6)).collect();
        let oracle = -dists.iter().zip(&targets).map(|(d, &t)| d[t].ln()).sum::<f64>() / 3.0;
        let mut g = Graph::new(&[]);
        let vars: Vec<_> = dists.iter().map(|d| row(&mut g, d)).collect();
        let l = nll_loss(&mut g, &vars, &targets).unwrap();
        assert!((g.value(l).item() - oracle).abs() < 1e-12);
    }
}

#[test]
fn flow_loss_example_values() {
    use EvidenceLabel::{CES, HES, NONE};
    let ev = [CES, CES, HES, NONE, NONE];
    let v = flow_value(&[0.25, 0.25, 0.2, 0.15, 0.15], &ev, 1.0, 1.0);
    assert!((v - (-(0.5f64).ln() + 0.2)).abs() < 1e-12 && (v - 0.8931).abs() < 1e-4);
    assert!(flow_value(&[0.5, 0.5, 0.0, 0.0, 0.0], &ev, 1.0, 0.5).abs() < 1e-12);
    let a = flow_value(&[0.25, 0.25, 0.1, 0.2, 0.2], &ev, 1.0, 0.0);
    let b = flow_value(&[0.25, 0.25, 0.4, 0.05, 0.05], &ev, 1.0, 0.0);
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn joint_loss_totals_components() {
    let cfg = common::micro_config(20);
    let params = common::random_params(&cfg, 4);
    let mut rng = common::rng(4);
    for (hist, target) in [(0, 3), (2, 3), (3, 4)] {
        let ex = common::random_example(&mut rng, &cfg, 7, hist, target, 0);
        let b = joint_loss(&params, &ex).unwrap();
        assert!((b.total - (b.nll + b.coref + b.flow)).abs() < 1e-6);
        assert!(b.nll >= 0.0 && b.coref >= 0.0 && b.flow >= 0.0);
        assert_eq!(b.coref == 0.0, ex.coref.is_none());
    }
    let mut ex = common::random_example(&mut rng, &cfg, 7, 0, 3, 0);
    ex.token_evidence = vec![EvidenceLabel::NONE; 7];
    let b = joint_loss(&params, &ex).unwrap();
    assert_eq!(b.total, b.nll);
}

proptest! {
    #[test]
    fn losses_are_non_negative_and_monotone(
        m in 0.01f64..1.0, other in 0.01f64..1.0, p in 0.01f64..0.99, dm in 0.0f64..0.5, dp in 0.0f64..0.5,
        l1 in 0.0f64..2.0, l2 in 0.0f64..2.0, s in 0.0f64..1.0,
    ) {
        let base = coref_value(m, other, p, l1, l2, s);
        prop_assert!(base >= -1e-12);
        prop_assert!(coref_value(m + dm, other, p, l1, l2, s) <= base + 1e-12);
        let p2 = (p + dp).min(1.0);
        prop_assert!(coref_value(m, other, p2, l1, l2, s) <= base + 1e-12);
    }

    #[test]
    fn flow_loss_monotone_in_evidence_mass(
        ces in 0.05f64..1.0, hes in 0.0f64..1.0, none in 0.01f64..1.0, d in 0.0f64..1.0,
        l3 in 0.0f64..2.0, l4 in 0.0f64..2.0,
    ) {
        use EvidenceLabel::{CES, HES, NONE};
        let ev = [CES, HES, NONE];
        let base = flow_value(&[ces, hes, none], &ev, l3, l4);
        prop_assert!(base >= -1e-12);
        prop_assert!(flow_value(&[ces + d, hes, none], &ev, l3, l4) <= base + 1e-12);
        // with CES share held fixed, HES mass only adds penalty
        let shifted = flow_value(&[ces, hes + d, none - d], &ev, l3, l4);
        if d <= none {
            prop_assert!(shifted >= base - 1e-12);
        }
    }
}

fn small_model(vocab: usize, lambdas: [f64; 4]) -> ModelConfig {
    ModelConfig {
        lambda1: lambdas[0],
        lambda2: lambdas[1],
        lambda3: lambdas[2],
        lambda4: lambdas[3],
        chunks: 10,
        n_max: 20,
        ..common::micro_config(vocab)
    }
}

fn small_data() -> (coqg_core::corpus::Preprocessed, Vec<coqg_core::nnet::IndexedExample>, Vec<coqg_core::nnet::IndexedExample>) {
    let pre = common::synthetic_corpus(10, 11);
    let tr = common::index_all(&pre.train[..12], &pre.vocab);
    let va = common::index_all(&pre.validation, &pre.vocab);
    (pre, tr, va)
}

fn small_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        epochs,
        batch_size: 4,
        clip_norm: 5.0,
        seed: 3,
    }
}

#[test]
fn training_is_deterministic() {
    let (pre, tr, va) = small_data();
    let cfg = ModelConfig {
        dropout: 0.2,
        ..small_model(pre.vocab.len(), [1.0, 1.0, 1.0, 0.5])
    };
    let run = || train(Parameters::init(&cfg), &tr, &va, &small_train_config(3), &TrainRun::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.last, b.last);
    assert_eq!(a.best, b.best);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.train, y.train);
        assert_eq!(x.val_nll, y.val_nll);
    }
}

#[test]
fn zero_lambdas_reduce_to_pure_nll_training() {
    let (pre, tr, _) = small_data();
    let cfg = small_model(pre.vocab.len(), [0.0; 4]);
    let mut joint = Trainer::new(Parameters::init(&cfg), small_train_config(0)).unwrap();
    let mut nll = Trainer::new(Parameters::init(&cfg), small_train_config(0)).unwrap();
    for epoch in 1..=3 {
        let a = joint.epoch(&tr, epoch, Objective::Joint).unwrap();
        let b = nll.epoch(&tr, epoch, Objective::Nll).unwrap();
        assert_eq!(a.loss.total, b.loss.total);
        assert_eq!((a.loss.coref, a.loss.flow), (0.0, 0.0));
    }
    assert_eq!(joint.params, nll.params);
}

#[test]
fn poisoned_learning_rate_aborts_with_divergence() {
    let (pre, tr, va) = small_data();
    let cfg = small_model(pre.vocab.len(), [1.0, 1.0, 1.0, 0.5]);
    let config = TrainConfig {
        learning_rate: 1e300,
        ..small_train_config(5)
    };
    match train(Parameters::init(&cfg), &tr, &va, &config, &TrainRun::default()) {
        Err(Error::Diverged { epoch, last_good }) => {
            assert!(epoch >= 1);
            if let Some(ck) = last_good {
                assert!(ck.restore(&pre.vocab).unwrap().is_finite());
            }
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.best_epoch)),
    }
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let (pre, tr, va) = small_data();
    let cfg = small_model(pre.vocab.len(), [1.0, 1.0, 1.0, 0.5]);
    let config = TrainConfig {
        batch_size: 0,
        ..small_train_config(1)
    };
    assert!(matches!(train(Parameters::init(&cfg), &tr, &va, &config, &TrainRun::default()), Err(Error::Config(_))));
}

#[test]
fn one_coref_step_moves_both_quantities_up() {
    let cfg = common::micro_config(20);
    let mut rng = common::rng(21);
    let ex = common::random_example(&mut rng, &cfg, 6, 2, 3, 0);
    let mut params = common::random_params(&cfg, 21);
    let (r0, p0) = common::coref_measures(&params, &ex);
    let (grads, ..) = Trainer::example_gradients(&params, &ex, &mut Mode::Eval, Objective::Coref).unwrap();
    sgd_update(params.tensors_mut(), &grads, 0.05);
    let (r1, p1) = common::coref_measures(&params, &ex);
    assert!(r1 > r0 && p1 > p0, "ratio {r0} -> {r1}, p {p0} -> {p1}");
}

#[test]
fn log_and_best_checkpoint_follow_validation_nll() {
    let (pre, tr, va) = small_data();
    let cfg = small_model(pre.vocab.len(), [1.0, 1.0, 1.0, 0.5]);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("loss.csv");
    let run = TrainRun {
        vocab_hash: pre.vocab.hash(),
        log_path: Some(log.clone()),
    };
    let out = train(Parameters::init(&cfg), &tr, &va, &small_train_config(4), &run).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,nll,coref,flow,total,val_nll");
    assert_eq!(lines.len(), 5);
    let best = out
        .history
        .iter()
        .min_by(|a, b| a.val_nll.partial_cmp(&b.val_nll).unwrap())
        .unwrap();
    assert_eq!(out.best_epoch, best.epoch);
    assert_eq!(out.best.epoch, Some(best.epoch));
    let path = dir.path().join("best.json");
    out.best.save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap().restore(&pre.vocab).unwrap();
    assert_eq!(evaluate_loss(&restored, &va).unwrap().nll, best.val_nll);
}
