//! Conversational question generation with coreference alignment and
//! conversation flow modeling.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: CoQA ingestion, filtering, span location, evidence labels,
//!   coreference annotation and vocabulary.
//! - [`nnet`]: the multi-source encoder, unified hierarchical attention and
//!   the copy decoder, built on the small reverse-mode engine in [`graph`].
//! - [`objectives`]: NLL, coreference alignment and flow losses plus training.
//! - [`decode`]: beam search with unigram blocking.
//! - [`metrics`]: BLEU, ROUGE-L, pronoun P/R/F and attention mass diagnostics.
//! - [`analysis`]: turn-chunk vs. passage-chunk flow statistics.

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod nnet;
pub mod objectives;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
