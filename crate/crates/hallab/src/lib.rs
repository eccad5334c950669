//! A laboratory for studying training-set hallucination in small
//! autoregressive language models trained on knowledge-graph triplets.
//!
//! The pipeline: build or ingest a knowledge graph ([`kg`]), split and pack
//! it into training corpora ([`corpus`], [`packing`]), train decoder-only
//! transformers from scratch ([`model`], [`train`]), sample object
//! completions ([`sampler`]), label them exactly against the graph
//! ([`oracle`]), train hallucination detectors ([`detector`]), and
//! aggregate the scaling metrics into tables and plots ([`metrics`],
//! [`report`]). [`runner`] orchestrates the whole sweep behind the CLI.

pub mod corpus;
pub mod detector;
pub mod error;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod packing;
pub mod report;
pub mod runner;
pub mod sampler;
pub mod seed;
pub mod tokenizer;
pub mod train;
pub mod trie;

pub use error::{Error, Result};
pub use kg::{KnowledgeGraph, SynthConfig, Triplet};
pub use tokenizer::TokenizerVocab;
pub use trie::ObjectTrie;
