//! Machine reading of hypothesis statements in scholarly text.
//!
//! The crate is organised as a pipeline:
//!
//! * [`ingest`] turns documents into sentences and trigger-matched candidates,
//! * [`lexicon`] holds the shared feature substrate (word vectors, n-gram
//!   vocabularies, bag-of-n-gram vectors, stemming, stop words),
//! * [`detector`] is a fastText-style hypothesis/non-hypothesis classifier,
//! * [`explainer`] produces word-removal local explanations of the detector,
//! * [`tagger`] is a stacked bidirectional LSTM labelling cause/outcome tokens,
//! * [`linker`] classifies causality and direction with logistic regression,
//! * [`evalkit`] provides metrics and fold plans shared by all trainers,
//! * [`pipeline`] wires everything into the exported hypothesis table.

pub mod container;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod explainer;
pub mod ingest;
pub mod lexicon;
pub mod linalg;
pub mod linker;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tagger;

pub use error::{Error, Result};
