//! Command implementations behind the `coqg` binary.
//!
//! Every command reads its settings from an optional flat config file,
//! applies `--set key=value` overrides and `--seed`, validates them and only
//! then touches data. All outputs are written atomically.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coqg_core::analysis::flow_heatmap;
use coqg_core::config::Settings;
use coqg_core::corpus::coqa::load_coqa;
use coqg_core::corpus::{
    build_examples, preprocess, BasicTokenizer, BuildOptions, CharSpan, CorefProvider, FileProvider, HeuristicProvider, ProcessedExample,
    RawConversation, RawTurn, Tokenizer, Vocabulary,
};
use coqg_core::decode::{beam_search, greedy, BeamConfig, GenerationRecord};
use coqg_core::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use coqg_core::metrics::{default_pronoun_lexicon, EvalItem, EvalReport};
use coqg_core::nnet::{Checkpoint, IndexedExample, Parameters};
use coqg_core::objectives::{train, TrainRun};
use coqg_core::synthetic::{generate, SyntheticConfig};
use rayon::prelude::*;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const REPORT_FILE: &str = "report.json";
pub const BEST_CHECKPOINT: &str = "best.json";
pub const LAST_CHECKPOINT: &str = "last.json";
pub const LOSS_LOG: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const COQA_TRAIN: &str = "coqa-train-v1.0.json";
pub const COQA_DEV: &str = "coqa-dev-v1.0.json";

#[derive(Debug, Parser)]
#[command(name = "coqg", version, about = "Conversational question generation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat `key = value` config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and dropout
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=2`; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Default root for raw data files
    #[arg(long, global = true, env = "COQG_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build train/validation/test example files and the vocabulary
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed data directory
    Train(TrainArgs),
    /// Generate questions for a preprocessed split
    Generate(GenerateArgs),
    /// Score generations against gold questions
    Evaluate(EvaluateArgs),
    /// Turn-chunk vs. passage-chunk rationale heatmap
    AnalyzeFlow(AnalyzeArgs),
    /// Interactive question generation over a pasted passage
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// CoQA JSON file; defaults to the training file under the data root
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Generate this many synthetic conversations instead of reading CoQA
    #[arg(long, conflicts_with = "input")]
    pub synthetic: Option<usize>,
    /// JSONL coreference records to use instead of the built-in heuristic
    #[arg(long)]
    pub coref_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory written by `preprocess`
    #[arg(long)]
    pub data: PathBuf,
    /// Disable the coreference loss (lambda1 = lambda2 = 0)
    #[arg(long)]
    pub no_coref: bool,
    /// Disable the flow loss (lambda3 = lambda4 = 0)
    #[arg(long)]
    pub no_flow: bool,
    /// Use only the first N training examples
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory written by `preprocess`
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Beam width; overrides the config
    #[arg(long)]
    pub beam_size: Option<usize>,
    /// Greedy decoding instead of beam search
    #[arg(long)]
    pub greedy: bool,
    /// Include per-step attention in every output line
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Generation JSONL written by `generate`
    #[arg(long)]
    pub generations: PathBuf,
    /// Gold example JSONL (a split written by `preprocess`)
    #[arg(long)]
    pub gold: PathBuf,
    /// Pronoun lexicon, one pronoun per line
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// CoQA JSON file; defaults to the dev file under the data root
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub chunks: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with
    #[arg(long)]
    pub vocab: PathBuf,
}

/// Config file, then `--set` overrides, then `--seed`.
pub fn load_settings(common: &CommonArgs) -> Result<Settings> {
    let mut s = match &common.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("override {kv:?} is not KEY=VALUE"))?;
        s.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        s.set("seed", &seed.to_string())?;
    }
    s.validate()?;
    Ok(s)
}

fn out_path(common: &CommonArgs, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn data_file(common: &CommonArgs, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    match &common.data_dir {
        Some(dir) => Ok(dir.join(name)),
        None => bail!("no input given and COQG_DATA_DIR is not set"),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(&cli.common, a).map(|_| ()),
        Command::Train(a) => cmd_train(&cli.common, a).map(|_| ()),
        Command::Generate(a) => cmd_generate(&cli.common, a).map(|_| ()),
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&cli.common, a)?;
            print!("{}", report.to_table());
            if report.has_nan() {
                bail!("evaluation produced NaN");
            }
            Ok(())
        }
        Command::AnalyzeFlow(a) => cmd_analyze_flow(&cli.common, a).map(|_| ()),
        Command::Demo(a) => {
            let settings = load_settings(&cli.common)?;
            let vocab: Vocabulary = read_json(&a.vocab)?;
            let params = Checkpoint::load(&a.checkpoint)?.restore(&vocab)?;
            let stdin = std::io::stdin();
            run_demo(&params, &vocab, &settings, stdin.lock(), std::io::stdout().lock())?;
            Ok(())
        }
    }
}

/// Runs the pipeline and writes the three splits, the vocabulary, the report
/// and the effective config into the output directory.
pub fn cmd_preprocess(common: &CommonArgs, args: &PreprocessArgs) -> Result<coqg_core::corpus::PreprocessReport> {
    let settings = load_settings(common)?;
    let out = out_path(common, "data");
    let convs = match args.synthetic {
        Some(n) => generate(&SyntheticConfig {
            conversations: n,
            seed: settings.model.seed,
            ..SyntheticConfig::default()
        }),
        None => {
            let input = data_file(common, &args.input, COQA_TRAIN)?;
            load_coqa(&input).with_context(|| format!("loading {}", input.display()))?
        }
    };
    let provider: Box<dyn CorefProvider> = match &args.coref_file {
        Some(p) => Box::new(FileProvider::load(p)?),
        None => Box::new(HeuristicProvider),
    };
    let pre = preprocess(convs, settings.pipeline, provider.as_ref());
    write_jsonl(&out.join(TRAIN_FILE), &pre.train)?;
    write_jsonl(&out.join(VALIDATION_FILE), &pre.validation)?;
    write_jsonl(&out.join(TEST_FILE), &pre.test)?;
    write_json(&out.join(VOCAB_FILE), &pre.vocab)?;
    write_json(&out.join(REPORT_FILE), &pre.report)?;
    write_atomic(&out.join(CONFIG_FILE), settings.to_text().as_bytes())?;
    log::info!(
        "{} examples from {} conversations; filtered {:.1}% of QA pairs; mean span F1 {:.4}; coreference coverage {:.1}%",
        pre.report.examples,
        pre.report.conversations,
        pre.report.filtered_percent,
        pre.report.mean_span_f1,
        100.0 * pre.report.coref_coverage
    );
    Ok(pre.report)
}

fn load_split(dir: &Path, split: &str) -> Result<Vec<ProcessedExample>> {
    let name = match split {
        "train" => TRAIN_FILE,
        "validation" | "val" | "dev" => VALIDATION_FILE,
        "test" => TEST_FILE,
        other => bail!("unknown split {other:?}"),
    };
    Ok(read_jsonl(&dir.join(name))?)
}

/// Settings of a training run after the ablation flags are applied.
pub fn training_settings(common: &CommonArgs, args: &TrainArgs) -> Result<Settings> {
    let mut s = load_settings(common)?;
    if args.no_coref {
        s.model.lambda1 = 0.0;
        s.model.lambda2 = 0.0;
    }
    if args.no_flow {
        s.model.lambda3 = 0.0;
        s.model.lambda4 = 0.0;
    }
    Ok(s)
}

/// Trains and writes the best and last checkpoints, the loss log and the
/// effective config into the output directory.
pub fn cmd_train(common: &CommonArgs, args: &TrainArgs) -> Result<coqg_core::objectives::TrainOutcome> {
    let mut settings = training_settings(common, args)?;
    let out = out_path(common, "model");
    let vocab: Vocabulary = read_json(&args.data.join(VOCAB_FILE))?;
    settings.model.vocab_size = vocab.len();
    settings.model.validate()?;
    let mut train_set = load_split(&args.data, "train")?;
    if let Some(n) = args.limit {
        train_set.truncate(n);
    }
    let val_set = load_split(&args.data, "validation")?;
    let index = |xs: &[ProcessedExample]| -> Vec<IndexedExample> { xs.iter().map(|e| IndexedExample::new(e, &vocab)).collect() };
    let (train_ix, val_ix) = (index(&train_set), index(&val_set));
    write_atomic(&out.join(CONFIG_FILE), settings.to_text().as_bytes())?;
    let run = TrainRun {
        vocab_hash: vocab.hash(),
        log_path: Some(out.join(LOSS_LOG)),
    };
    let params = Parameters::init(&settings.model);
    let outcome = match train(params, &train_ix, &val_ix, &settings.train, &run) {
        Ok(o) => o,
        Err(coqg_core::Error::Diverged { epoch, last_good }) => {
            if let Some(ck) = last_good {
                ck.save(&out.join(BEST_CHECKPOINT))?;
            }
            bail!("training diverged at epoch {epoch}; last good checkpoint kept in {}", out.display());
        }
        Err(e) => return Err(e.into()),
    };
    outcome.best.save(&out.join(BEST_CHECKPOINT))?;
    Checkpoint::new(&outcome.last, vocab.hash(), outcome.history.last().map(|r| r.epoch)).save(&out.join(LAST_CHECKPOINT))?;
    log::info!("best epoch {} of {}", outcome.best_epoch, outcome.history.len());
    Ok(outcome)
}

/// Loads a checkpoint, refusing it if `vocab` is not the one it was trained with.
fn restore(checkpoint: &Path, vocab: &Vocabulary) -> Result<Parameters> {
    let ck = Checkpoint::load(checkpoint)?;
    ck.restore(vocab).with_context(|| format!("checkpoint {} was trained with a different vocabulary", checkpoint.display()))
}

/// Decodes every example of a split with gold conversation history.
pub fn cmd_generate(common: &CommonArgs, args: &GenerateArgs) -> Result<Vec<GenerationRecord>> {
    let settings = load_settings(common)?;
    let out = out_path(common, "generations.jsonl");
    let vocab: Vocabulary = read_json(&args.data.join(VOCAB_FILE))?;
    let params = restore(&args.checkpoint, &vocab)?;
    let examples = load_split(&args.data, &args.split)?;
    let beam = BeamConfig {
        beam_size: args.beam_size.unwrap_or(settings.beam.beam_size),
        ..settings.beam
    };
    let records: Vec<GenerationRecord> = examples
        .par_iter()
        .map(|e| {
            let ex = IndexedExample::new(e, &vocab);
            let result = if args.greedy {
                greedy(&params, &ex, &vocab, beam.max_len, beam.block_unigrams)?
            } else {
                beam_search(&params, &ex, &vocab, beam)?
            };
            Ok(GenerationRecord::new(&ex, &vocab, &result, args.trace))
        })
        .collect::<coqg_core::Result<_>>()?;
    write_jsonl(&out, &records)?;
    log::info!("{} questions written to {}", records.len(), out.display());
    Ok(records)
}

/// Joins generations to gold examples by (conversation, turn) and scores them.
pub fn cmd_evaluate(common: &CommonArgs, args: &EvaluateArgs) -> Result<EvalReport> {
    let out = out_path(common, "report.json");
    let generations: Vec<GenerationRecord> = read_jsonl(&args.generations)?;
    let gold: Vec<ProcessedExample> = read_jsonl(&args.gold)?;
    let lexicon = match &args.lexicon {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect(),
        None => default_pronoun_lexicon(),
    };
    let by_key: HashMap<(&str, usize), &ProcessedExample> = gold.iter().map(|e| ((e.conversation_id.as_str(), e.turn_number), e)).collect();
    let mut items = Vec::with_capacity(generations.len());
    for g in &generations {
        let Some(ex) = by_key.get(&(g.conversation_id.as_str(), g.turn_id)) else {
            bail!("no gold example for conversation {} turn {}", g.conversation_id, g.turn_id);
        };
        items.push(EvalItem {
            candidate: g.question.split_whitespace().map(str::to_string).collect(),
            reference: ex.target_question.clone(),
            in_coref_subset: ex.coref.is_some(),
            attention: g.attention.clone(),
            evidence: ex.token_evidence(),
        });
    }
    let report = EvalReport::compute(&items, &lexicon)?;
    log::info!("coreference subset: {} of {} examples", report.coref_subset, report.examples);
    write_json(&out, &report)?;
    Ok(report)
}

/// Writes `heatmap.csv` and `summary.json` into the output directory.
pub fn cmd_analyze_flow(common: &CommonArgs, args: &AnalyzeArgs) -> Result<coqg_core::analysis::FlowSummary> {
    let out = out_path(common, "flow");
    let input = data_file(common, &args.input, COQA_DEV)?;
    let convs = load_coqa(&input).with_context(|| format!("loading {}", input.display()))?;
    let heatmap = flow_heatmap(&convs, args.chunks)?;
    let summary = heatmap.summary();
    write_atomic(&out.join("heatmap.csv"), heatmap.to_csv().as_bytes())?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Outcome of an interactive session.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct DemoSession {
    /// Generated question and answer text of every completed turn.
    pub turns: Vec<(String, String)>,
}

/// Interactive loop: the first non-empty line is the passage; each later
/// line is an inclusive token range `start end` to use as the answer, or
/// `quit`. Each generated question becomes history for the next turn.
pub fn run_demo<R: BufRead, W: Write>(params: &Parameters, vocab: &Vocabulary, settings: &Settings, input: R, mut out: W) -> Result<DemoSession> {
    let mut lines = input.lines();
    writeln!(out, "Paste a passage on one line:")?;
    let passage = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Ok(DemoSession::default()),
        }
    };
    let tokens = BasicTokenizer.tokenize(&passage);
    if tokens.is_empty() {
        bail!("passage has no tokens");
    }
    let numbered: Vec<String> = tokens.iter().enumerate().map(|(i, t)| format!("{i}:{}", t.raw)).collect();
    writeln!(out, "{}", numbered.join(" "))?;

    let opts = BuildOptions {
        chunks: params.config().chunks,
        ..settings.pipeline.build
    };
    let mut conv = RawConversation {
        id: "demo".into(),
        passage_text: passage.clone(),
        turns: Vec::new(),
    };
    let mut session = DemoSession::default();
    let chars: Vec<char> = passage.chars().collect();
    loop {
        write!(out, "answer span (start end) or quit> ")?;
        out.flush()?;
        let Some(line) = lines.next() else { break };
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "quit" || line == "exit" {
            break;
        }
        let nums: Vec<usize> = line.split_whitespace().filter_map(|s| s.parse().ok()).collect();
        let (start, end) = match nums[..] {
            [s, e] if s <= e && e < tokens.len() && line.split_whitespace().count() == 2 => (s, e),
            _ => {
                writeln!(out, "expected two token indices between 0 and {}", tokens.len() - 1)?;
                continue;
            }
        };
        let span = CharSpan {
            start: tokens[start].start,
            end: tokens[end].end,
        };
        let answer: String = chars[span.start..span.end].iter().collect();
        let mut trial = conv.clone();
        trial.turns.push(RawTurn {
            turn_id: conv.turns.len() + 1,
            question: "?".into(),
            answer: answer.clone(),
            rationale: Some(span),
        });
        let Some(example) = build_examples(&trial, opts).into_iter().find(|e| e.turn_number == trial.turns.len()) else {
            writeln!(out, "that answer cannot anchor a question; pick another span")?;
            continue;
        };
        let ex = IndexedExample::new(&example, vocab);
        let result = beam_search(params, &ex, vocab, settings.beam)?;
        let question = result.text();
        writeln!(out, "Q{}: {question}", trial.turns.len())?;
        trial.turns.last_mut().expect("turn just pushed").question = question.clone();
        conv = trial;
        session.turns.push((question, answer));
    }
    Ok(session)
}
