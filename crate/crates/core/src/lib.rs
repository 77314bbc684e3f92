//! Semantic-alignment scoring and implicit reasoning distillation on a
//! self-contained, CPU-sized transformer stack.
//!
//! The crate trains three cooperating pieces from scratch:
//!
//! 1. a decoder-only target language model that answers synthetic
//!    reasoning tasks when prompted with explicit chain-of-thought,
//! 2. a sentence scorer built from the target model's middle layers that
//!    rates how semantically aligned two reasoning texts are, trained
//!    contrastively on (full, condensed) reasoning pairs, and
//! 3. a lightweight generator that emits a handful of continuous
//!    "implicit reasoning" vectors the frozen target model consumes in
//!    place of spelled-out reasoning tokens, trained to keep the answer
//!    likely and the implicit vectors semantically aligned with the real
//!    reasoning.
//!
//! Everything runs on one CPU core with no external model weights.

pub mod autograd;
pub mod case_study;
pub mod checkpoint;
pub mod cli;
pub mod condense;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod inference;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod run;
pub mod sentence_transformer;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

/// CLI entry point; returns the process exit code.
pub fn run_cli() -> i32 {
    cli::run()
}
