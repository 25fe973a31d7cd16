//! Mini-batch teacher-forced training with validation model selection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{joint_loss, loss_graph, LossBreakdown, Objective};
use super::optim::{clip_global_norm, Adam};
use crate::graph::{Graph, Gradients};
use crate::nnet::{Checkpoint, IndexedExample, Mode, Parameters};
use crate::{io, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Seed for batch order and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::Config(format!("clip_norm must be non-negative, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training losses over the epoch.
    pub train: LossBreakdown,
    pub val_nll: f64,
    pub coref_examples: usize,
    /// Examples whose flow term was skipped for lack of CES tokens.
    pub flow_skipped: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation NLL.
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: Parameters,
    pub history: Vec<EpochRecord>,
}

/// Single-writer optimizer state around a parameter store.
pub struct Trainer {
    pub params: Parameters,
    pub config: TrainConfig,
    optimizer: Adam,
}

/// Summed statistics of one optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss: LossBreakdown,
    pub coref_examples: usize,
    pub flow_skipped: usize,
    pub grad_norm: f64,
}

fn dropout_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (epoch as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (index as u64).wrapping_mul(0x1656_67B1_9E37_79F9)
}

impl Trainer {
    pub fn new(params: Parameters, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        params.config().validate()?;
        let optimizer = Adam::new(config.learning_rate, params.tensors().len());
        Ok(Trainer {
            params,
            config,
            optimizer,
        })
    }

    /// Gradient of `objective` for one example.
    pub fn example_gradients(
        params: &Parameters,
        ex: &IndexedExample,
        mode: &mut Mode,
        objective: Objective,
    ) -> Result<(Gradients, LossBreakdown, bool, bool)> {
        let mut g = Graph::new(params.tensors());
        let lg = loss_graph(&mut g, params, ex, mode, objective)?;
        Ok((g.backward(lg.loss), lg.breakdown, lg.coref_applied, lg.flow_applied))
    }

    /// One clipped Adam step on the mean gradient of `batch`. Each entry is
    /// `(dataset index, example)`; the index keys the dropout stream.
    pub fn step(&mut self, batch: &[(usize, &IndexedExample)], epoch: usize, objective: Objective) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let weight = 1.0 / batch.len() as f64;
        let mut grads = Gradients::empty(self.params.tensors().len());
        let mut stats = StepStats::default();
        let dropout = self.params.config().dropout;
        let seed = self.config.seed;
        let width = rayon::current_num_threads().max(1);
        // fixed-order accumulation keeps the result independent of scheduling
        for chunk in batch.chunks(width) {
            let params = &self.params;
            let results: Vec<_> = chunk
                .par_iter()
                .map(|&(idx, ex)| {
                    let mut mode = Mode::train(dropout, dropout_seed(seed, epoch, idx));
                    Self::example_gradients(params, ex, &mut mode, objective)
                })
                .collect();
            for r in results {
                let (g, loss, coref, flow) = r?;
                grads.accumulate(&g, weight);
                stats.loss.accumulate(&loss, 1.0);
                stats.coref_examples += coref as usize;
                let wants_flow = matches!(objective, Objective::Flow | Objective::Joint);
                stats.flow_skipped += (wants_flow && !flow) as usize;
            }
        }
        if !stats.loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_good: None,
            });
        }
        stats.grad_norm = clip_global_norm(&mut grads, self.config.clip_norm);
        self.optimizer.update(self.params.tensors_mut(), &grads);
        if !self.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_good: None,
            });
        }
        Ok(stats)
    }

    /// Runs one epoch over `examples` in a seeded shuffled order.
    pub fn epoch(&mut self, examples: &[IndexedExample], epoch: usize, objective: Objective) -> Result<StepStats> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9)));
        let mut total = StepStats::default();
        for batch in order.chunks(self.config.batch_size) {
            let items: Vec<(usize, &IndexedExample)> = batch.iter().map(|&i| (i, &examples[i])).collect();
            let s = self.step(&items, epoch, objective)?;
            total.loss.accumulate(&s.loss, 1.0);
            total.coref_examples += s.coref_examples;
            total.flow_skipped += s.flow_skipped;
            total.grad_norm = total.grad_norm.max(s.grad_norm);
        }
        let n = examples.len().max(1) as f64;
        let sum = total.loss;
        total.loss = LossBreakdown::default();
        total.loss.accumulate(&sum, 1.0 / n);
        Ok(total)
    }
}

/// Mean evaluation-mode losses over a dataset.
pub fn evaluate_loss(params: &Parameters, examples: &[IndexedExample]) -> Result<LossBreakdown> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let losses: Vec<LossBreakdown> = examples.par_iter().map(|ex| joint_loss(params, ex)).collect::<Result<_>>()?;
    let mut mean = LossBreakdown::default();
    for l in &losses {
        mean.accumulate(l, 1.0 / examples.len() as f64);
    }
    Ok(mean)
}

pub fn csv_header() -> &'static str {
    "epoch,nll,coref,flow,total,val_nll"
}

pub fn csv_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.epoch, r.train.nll, r.train.coref, r.train.flow, r.train.total, r.val_nll
    )
}

/// Options for [`train`] beyond the hyperparameters.
#[derive(Clone, Debug, Default)]
pub struct TrainRun {
    pub vocab_hash: String,
    /// CSV loss log rewritten after every epoch.
    pub log_path: Option<PathBuf>,
}

/// Trains `params` on `train_set`, selecting the epoch with the lowest
/// validation NLL (training NLL when `val_set` is empty).
pub fn train(
    params: Parameters,
    train_set: &[IndexedExample],
    val_set: &[IndexedExample],
    config: &TrainConfig,
    run: &TrainRun,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for ex in train_set.iter().chain(val_set) {
        ex.check(params.config())?;
    }
    let mut trainer = Trainer::new(params, config.clone())?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let diverged = |epoch: usize, best: &Option<(f64, usize, Checkpoint)>| Error::Diverged {
        epoch,
        last_good: best.as_ref().map(|b| Box::new(b.2.clone())),
    };

    for epoch in 1..=config.epochs {
        let stats = match trainer.epoch(train_set, epoch, Objective::Joint) {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => return Err(diverged(epoch, &best)),
            Err(e) => return Err(e),
        };
        let val_nll = if val_set.is_empty() {
            evaluate_loss(&trainer.params, train_set)?.nll
        } else {
            evaluate_loss(&trainer.params, val_set)?.nll
        };
        if !val_nll.is_finite() {
            return Err(diverged(epoch, &best));
        }
        let record = EpochRecord {
            epoch,
            train: stats.loss,
            val_nll,
            coref_examples: stats.coref_examples,
            flow_skipped: stats.flow_skipped,
        };
        log::info!(
            "epoch {epoch}: nll {:.4} coref {:.4} flow {:.4} total {:.4} val_nll {:.4}",
            record.train.nll,
            record.train.coref,
            record.train.flow,
            record.train.total,
            val_nll
        );
        history.push(record);
        if best.as_ref().is_none_or(|b| val_nll < b.0) {
            best = Some((val_nll, epoch, Checkpoint::new(&trainer.params, run.vocab_hash.clone(), Some(epoch))));
        }
        if let Some(path) = &run.log_path {
            write_log(path, &history)?;
        }
    }
    let (_, best_epoch, best) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, Checkpoint::new(&trainer.params, run.vocab_hash.clone(), Some(0))),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: trainer.params,
        history,
    })
}

pub fn write_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(csv_header());
    out.push('\n');
    for r in history {
        let _ = writeln!(out, "{}", csv_row(r));
    }
    io::write_atomic(path, out.as_bytes())
}
